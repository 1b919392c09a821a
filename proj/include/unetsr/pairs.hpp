#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace unetsr {

/// Output edge of generated high-resolution images.
inline constexpr std::size_t kPairTargetExtent = 224;

struct PairEntry {
  std::filesystem::path lr;
  std::filesystem::path hr;
  int scale = 2;

  bool operator==(const PairEntry&) const = default;
};

/// Training/evaluation pairs ordered lexicographically by `hr`.
///
/// In memory the paths are resolved (relative to the working directory or
/// absolute). On disk, `pairs.json` is an array of {"lr", "hr", "scale"}
/// objects whose paths are relative to the manifest's own directory.
struct PairManifest {
  std::vector<PairEntry> entries;

  void sort();
  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

/// Throws ConfigError unless scale is 2, 4 or 8.
void validate_scale(int scale);

/// Serialised form relative to `manifest_dir` (trailing newline included).
std::string manifest_to_json(const PairManifest& manifest,
                             const std::filesystem::path& manifest_dir);
PairManifest manifest_from_json(const std::string& text,
                                const std::filesystem::path& manifest_dir);

void save_manifest(const PairManifest& manifest, const std::filesystem::path& file);
/// Throws IoError if unreadable, CorruptFileError on malformed content.
PairManifest load_manifest(const std::filesystem::path& file);

struct PairGenResult {
  PairManifest manifest;
  std::filesystem::path manifest_path;
  std::vector<std::string> warnings;
};

/// Bicubic-resizes every decodable image in `src_dir` (non-recursive) to
/// target x target and downsamples that to target / scale. Writes
/// `<out>/hr/<stem>.png`, `<out>/x<scale>/lr/<stem>.png` and
/// `<out>/x<scale>/pairs.json`. Undecodable files and duplicate stems are
/// skipped with a warning; a directory without any usable image is an error.
PairGenResult make_pairs(const std::filesystem::path& src_dir,
                         const std::filesystem::path& out_dir, int scale,
                         std::size_t target = kPairTargetExtent);

}  // namespace unetsr
