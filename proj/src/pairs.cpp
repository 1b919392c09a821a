#include "unetsr/pairs.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unetsr/error.hpp"
#include "unetsr/image.hpp"
#include "unetsr/resample.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace unetsr {

void PairManifest::sort() {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const PairEntry& a, const PairEntry& b) {
                     return a.hr.generic_string() < b.hr.generic_string();
                   });
}

void validate_scale(int scale) {
  if (scale != 2 && scale != 4 && scale != 8) {
    throw ConfigError("scale must be 2, 4 or 8, got " + std::to_string(scale));
  }
}

namespace {

std::string relative_to(const fs::path& p, const fs::path& dir) {
  const fs::path base = fs::absolute(dir.empty() ? fs::path(".") : dir).lexically_normal();
  return fs::absolute(p).lexically_normal().lexically_relative(base).generic_string();
}

}  // namespace

std::string manifest_to_json(const PairManifest& manifest, const fs::path& manifest_dir) {
  json arr = json::array();
  for (const auto& e : manifest.entries) {
    arr.push_back({{"lr", relative_to(e.lr, manifest_dir)},
                   {"hr", relative_to(e.hr, manifest_dir)},
                   {"scale", e.scale}});
  }
  return arr.dump(2) + "\n";
}

PairManifest manifest_from_json(const std::string& text, const fs::path& manifest_dir) {
  PairManifest manifest;
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw CorruptFileError("manifest: top level must be an array");
    for (const auto& item : arr) {
      PairEntry e;
      e.lr = (manifest_dir / item.at("lr").get<std::string>()).lexically_normal();
      e.hr = (manifest_dir / item.at("hr").get<std::string>()).lexically_normal();
      e.scale = item.at("scale").get<int>();
      validate_scale(e.scale);
      manifest.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw CorruptFileError(std::string("manifest: ") + ex.what());
  } catch (const ConfigError& ex) {
    throw CorruptFileError(std::string("manifest: ") + ex.what());
  }
  return manifest;
}

void save_manifest(const PairManifest& manifest, const fs::path& file) {
  const fs::path dir = file.parent_path().empty() ? fs::path(".") : file.parent_path();
  fs::create_directories(dir);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << manifest_to_json(manifest, file.parent_path());
  if (!out) throw IoError("cannot write " + file.string());
}

PairManifest load_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return manifest_from_json(buf.str(), file.parent_path());
  } catch (const CorruptFileError& e) {
    throw CorruptFileError(file.string() + ": " + e.what());
  }
}

PairGenResult make_pairs(const fs::path& src_dir, const fs::path& out_dir, int scale,
                         std::size_t target) {
  validate_scale(scale);
  if (target == 0 || target % static_cast<std::size_t>(scale) != 0) {
    throw ConfigError("target extent " + std::to_string(target) + " is not divisible by scale " +
                      std::to_string(scale));
  }
  if (!fs::is_directory(src_dir)) throw IoError("not a directory: " + src_dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(src_dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  PairGenResult result;
  const fs::path hr_dir = out_dir / "hr";
  const fs::path scale_dir = out_dir / ("x" + std::to_string(scale));
  const fs::path lr_dir = scale_dir / "lr";
  const std::size_t lr_extent = target / static_cast<std::size_t>(scale);
  std::set<std::string> seen;
  for (const auto& file : files) {
    const std::string stem = file.stem().string();
    if (seen.count(stem) != 0) {
      result.warnings.push_back("skipping " + file.string() + ": duplicate name '" + stem + "'");
      continue;
    }
    ImageBuf source;
    try {
      source = decode_image(file);
    } catch (const IoError& e) {
      result.warnings.push_back(std::string("skipping undecodable file: ") + e.what());
      continue;
    }
    seen.insert(stem);
    const ImageBuf hr = from_tensor(bicubic_resize(to_tensor(source), target, target));
    const ImageBuf lr = from_tensor(bicubic_resize(to_tensor(hr), lr_extent, lr_extent));
    PairEntry entry{lr_dir / (stem + ".png"), hr_dir / (stem + ".png"), scale};
    encode_png(hr, entry.hr);
    encode_png(lr, entry.lr);
    result.manifest.entries.push_back(std::move(entry));
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  if (result.manifest.empty()) {
    throw IoError("no decodable images in " + src_dir.string());
  }
  result.manifest.sort();
  result.manifest_path = scale_dir / "pairs.json";
  save_manifest(result.manifest, result.manifest_path);
  return result;
}

}  // namespace unetsr
