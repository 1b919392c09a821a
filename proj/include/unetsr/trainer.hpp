#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "unetsr/checkpoint.hpp"
#include "unetsr/loss.hpp"
#include "unetsr/metrics.hpp"
#include "unetsr/model.hpp"
#include "unetsr/pairs.hpp"

namespace unetsr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments in parameter order plus the step counter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const ParamSet& params);
};

/// One bias-corrected Adam update from the accumulated parameter gradients
/// (a parameter without a gradient buffer counts as a zero gradient).
/// Throws NumericError naming the first parameter with a non-finite
/// gradient; nothing is updated in that case.
void adam_step(const ParamSet& params, AdamState& state, double lr, const AdamConfig& config);

/// Global L2 norm of every parameter gradient.
double grad_norm(const ParamSet& params);

/// lr0 * 0.5^floor(epoch / half_every), epochs counted from 0.
double scheduled_lr(double lr0, std::uint64_t half_every, std::uint64_t epoch);

struct TrainConfig {
  std::uint64_t epochs = 200;
  std::uint64_t batch_size = 1;
  double lr0 = 1e-3;
  std::uint64_t lr_half_every = 25;
  AdamConfig adam;
  std::uint64_t seed = 1;
  LossConfig loss;
  bool shuffle = true;
  /// Rescales gradients whose global norm exceeds this; 0 disables.
  double clip_norm = 0.0;

  /// Throws ConfigError.
  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
/// Strict: unknown or mistyped keys throw ConfigError.
TrainConfig train_config_from_json(const std::string& text);

/// One in-memory training pair; tensors are 1 x 3 x H x W in [0, 1].
struct Sample {
  std::string name;
  Tensor lr;
  Tensor hr;
};

std::vector<Sample> load_samples(const PairManifest& manifest);

/// Moves `count` seeded-random samples out of `samples` into the result.
/// The remaining training order is preserved.
std::vector<Sample> split_holdout(std::vector<Sample>& samples, std::size_t count,
                                  std::uint64_t seed);

/// Visiting order of `n` samples in `epoch`; a seeded Fisher-Yates shuffle
/// derived from (seed, epoch) only, so resumed runs see the same orders.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch,
                                     bool shuffle);

struct EpochRecord {
  /// Zero-based epoch index.
  std::uint64_t epoch = 0;
  /// Mean training loss over the epoch's samples.
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  /// Mean validation PSNR; NaN without validation data.
  double val_psnr_db = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;

  /// "epoch,loss,lr,seconds" rows.
  std::string csv() const;
  std::string json() const;
};

struct TrainOptions {
  /// latest.ckpt after every epoch, best.ckpt on validation improvement.
  /// Empty disables checkpointing.
  std::filesystem::path checkpoint_dir;
  std::vector<Sample> validation;
  /// Progress lines; nullptr for silence.
  std::ostream* log = nullptr;
};

class Trainer {
 public:
  Trainer(const NetConfig& net, const TrainConfig& config);
  /// Continues from a checkpoint that carries optimizer state and a
  /// training configuration.
  explicit Trainer(const Checkpoint& checkpoint);

  const Model& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  /// Lets a resumed run extend its epoch budget.
  void set_total_epochs(std::uint64_t epochs) { config_.epochs = epochs; }
  const AdamState& adam() const { return adam_; }
  std::uint64_t epochs_done() const { return epochs_done_; }
  double best_val_psnr() const { return best_val_psnr_; }

  /// Runs the next epoch over `data`.
  EpochRecord train_epoch(const std::vector<Sample>& data);

  /// Runs epochs until `config().epochs` have been completed.
  TrainReport train(const std::vector<Sample>& data, const TrainOptions& options = {});

  Checkpoint checkpoint() const;

 private:
  const PreparedInput& prepared(const Sample& sample);

  Model model_;
  TrainConfig config_;
  AdamState adam_;
  std::uint64_t epochs_done_ = 0;
  double best_val_psnr_;
  struct CacheEntry {
    Tensor source;
    PreparedInput input;
  };
  std::unordered_map<const double*, CacheEntry> cache_;
};

/// PSNR/SSIM of `model` on in-memory samples (predictions clamped to [0, 1]).
MetricReport evaluate_samples(const Model& model, const std::vector<Sample>& samples,
                              const SsimWindow& window = {});

/// Mean over samples of the exact (epsilon 0) gradient-magnitude error of the
/// clamped prediction.
double evaluate_mge(const Model& model, const std::vector<Sample>& samples);

struct SweepRow {
  int depth = 0;
  std::size_t param_count = 0;
  LossKind loss = LossKind::mixge;
  double lambda_g = 0.0;
  double final_loss = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mge = 0.0;
};

/// "depth,param_count,loss,lambda_g,final_loss,psnr_db,ssim,mge" rows.
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// One model per depth, trained on `train` and scored on `eval`.
std::vector<SweepRow> sweep_depth(const std::vector<int>& depths, const NetConfig& net,
                                  const TrainConfig& config, const std::vector<Sample>& train,
                                  const std::vector<Sample>& eval, std::ostream* log = nullptr);

/// One MixGE model per weight; with `include_mse` a leading MSE-only row.
std::vector<SweepRow> sweep_lambda(const std::vector<double>& lambdas, bool include_mse,
                                   const NetConfig& net, const TrainConfig& config,
                                   const std::vector<Sample>& train,
                                   const std::vector<Sample>& eval, std::ostream* log = nullptr);

}  // namespace unetsr
