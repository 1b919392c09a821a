#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unetsr/model.hpp"

namespace unetsr {

/// Parameters, optimizer moments and progress.
///
/// On disk: "USRC", u32 version, u64 header length, JSON header, then the
/// values of every tensor as little-endian binary64 in header order. The
/// header lists each tensor's name, shape and element offset.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  NetConfig net;
  ParamSet params;
  /// Adam moments in parameter order; empty when no optimizer state exists.
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  std::uint64_t adam_t = 0;
  /// Completed epochs.
  std::uint64_t epoch = 0;
  double lr = 0.0;
  /// Best validation PSNR so far (NaN when unused).
  double best_metric = 0.0;
  /// Training configuration as JSON text; empty when absent.
  std::string train_config;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CorruptFileError on a bad magic, version, header or length.
Checkpoint parse_checkpoint(const std::string& bytes);

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unetsr
