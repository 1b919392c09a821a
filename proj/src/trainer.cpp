#include "unetsr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unetsr/error.hpp"
#include "unetsr/image.hpp"
#include "unetsr/ops.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace unetsr {

AdamState AdamState::zeros_like(const ParamSet& params) {
  AdamState s;
  for (const auto& e : params) {
    s.m.emplace_back(e.tensor.shape());
    s.v.emplace_back(e.tensor.shape());
  }
  return s;
}

void adam_step(const ParamSet& params, AdamState& state, double lr, const AdamConfig& config) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match the parameters");
  }
  for (const auto& e : params) {
    for (double g : e.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + e.name);
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  std::size_t i = 0;
  for (const auto& e : params) {
    Tensor p = e.tensor;
    auto theta = p.mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    const auto g = e.tensor.grad();
    const bool has_grad = !g.empty();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = has_grad ? g[k] : 0.0;
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * (gk * gk);
      const double m_hat = m[k] / correct1;
      const double v_hat = v[k] / correct2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
    ++i;
  }
}

double grad_norm(const ParamSet& params) {
  double s = 0.0;
  for (const auto& e : params)
    for (double g : e.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

double scheduled_lr(double lr0, std::uint64_t half_every, std::uint64_t epoch) {
  if (half_every == 0) throw ConfigError("lr_half_every must be >= 1");
  const std::uint64_t halvings = epoch / half_every;
  return std::ldexp(lr0, -static_cast<int>(std::min<std::uint64_t>(halvings, 2000)));
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size != 1) throw ConfigError("only batch_size 1 is supported");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
  if (lr_half_every == 0) throw ConfigError("lr_half_every must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm)) {
    throw ConfigError("clip_norm must be finite and >= 0");
  }
  loss.validate();
}

std::string train_config_to_json(const TrainConfig& c) {
  const json j = {{"epochs", c.epochs},
                  {"batch_size", c.batch_size},
                  {"lr0", c.lr0},
                  {"lr_half_every", c.lr_half_every},
                  {"beta1", c.adam.beta1},
                  {"beta2", c.adam.beta2},
                  {"adam_eps", c.adam.eps},
                  {"seed", c.seed},
                  {"loss", to_string(c.loss.kind)},
                  {"lambda_g", c.loss.lambda_g},
                  {"sqrt_epsilon", c.loss.sqrt_epsilon},
                  {"shuffle", c.shuffle},
                  {"clip_norm", c.clip_norm}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("training configuration must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<std::uint64_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::uint64_t>();
      else if (key == "lr0") c.lr0 = value.get<double>();
      else if (key == "lr_half_every") c.lr_half_every = value.get<std::uint64_t>();
      else if (key == "beta1") c.adam.beta1 = value.get<double>();
      else if (key == "beta2") c.adam.beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam.eps = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "loss") c.loss.kind = parse_loss_kind(value.get<std::string>());
      else if (key == "lambda_g") c.loss.lambda_g = value.get<double>();
      else if (key == "sqrt_epsilon") c.loss.sqrt_epsilon = value.get<double>();
      else if (key == "shuffle") c.shuffle = value.get<bool>();
      else if (key == "clip_norm") c.clip_norm = value.get<double>();
      else throw ConfigError("unknown training key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training configuration: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Sample> load_samples(const PairManifest& manifest) {
  std::vector<Sample> out;
  for (const auto& e : manifest.entries) {
    Sample s{e.hr.filename().generic_string(), to_tensor(decode_image(e.lr)),
             to_tensor(decode_image(e.hr))};
    if (s.lr.dim(2) * static_cast<std::size_t>(e.scale) != s.hr.dim(2) ||
        s.lr.dim(3) * static_cast<std::size_t>(e.scale) != s.hr.dim(3)) {
      throw DimensionError("load_samples", "scale",
                           e.lr.string() + " is not 1/" + std::to_string(e.scale) + " of " +
                               e.hr.string());
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  return std::mt19937_64(seq);
}

// Fisher-Yates with a plain modulo draw: std::shuffle and the standard
// distributions are implementation-defined, this is not.
void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

std::vector<Sample> split_holdout(std::vector<Sample>& samples, std::size_t count,
                                  std::uint64_t seed) {
  if (count >= samples.size()) {
    throw ConfigError("validation holdout of " + std::to_string(count) + " leaves no training data (" +
                      std::to_string(samples.size()) + " samples)");
  }
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng = epoch_rng(seed, ~std::uint64_t{0});
  shuffle_indices(idx, rng);
  std::vector<bool> held(samples.size(), false);
  for (std::size_t i = 0; i < count; ++i) held[idx[i]] = true;
  std::vector<Sample> train, val;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (held[i] ? val : train).push_back(std::move(samples[i]));
  }
  samples = std::move(train);
  return val;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch,
                                     bool shuffle) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (shuffle) {
    std::mt19937_64 rng = epoch_rng(seed, epoch);
    shuffle_indices(idx, rng);
  }
  return idx;
}

std::string TrainReport::csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,lr,seconds\n";
  for (const auto& r : epochs) out << r.epoch << ',' << r.loss << ',' << r.lr << ',' << r.seconds << '\n';
  return out.str();
}

std::string TrainReport::json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : epochs) {
    nlohmann::json row = {{"epoch", r.epoch}, {"loss", r.loss}, {"lr", r.lr}, {"seconds", r.seconds}};
    if (!std::isnan(r.val_psnr_db)) {
      row["val_psnr_db"] = std::isinf(r.val_psnr_db) ? nlohmann::json("inf") : nlohmann::json(r.val_psnr_db);
    }
    arr.push_back(row);
  }
  return nlohmann::json{{"epochs", arr}}.dump(2) + "\n";
}

Trainer::Trainer(const NetConfig& net, const TrainConfig& config)
    : model_(net),
      config_(config),
      adam_(AdamState::zeros_like(model_.params())),
      best_val_psnr_(std::numeric_limits<double>::quiet_NaN()) {
  config_.validate();
}

Trainer::Trainer(const Checkpoint& ckpt)
    : model_(ckpt.net, ckpt.params.clone()),
      config_(ckpt.train_config.empty()
                  ? throw ConfigError("checkpoint carries no training configuration")
                  : train_config_from_json(ckpt.train_config)),
      epochs_done_(ckpt.epoch),
      best_val_psnr_(ckpt.best_metric) {
  if (ckpt.adam_m.size() != ckpt.params.size()) {
    throw ConfigError("checkpoint carries no optimizer state");
  }
  for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
    adam_.m.push_back(ckpt.adam_m[i].clone());
    adam_.v.push_back(ckpt.adam_v[i].clone());
  }
  adam_.t = ckpt.adam_t;
}

const PreparedInput& Trainer::prepared(const Sample& sample) {
  const double* key = sample.lr.data().data();
  auto it = cache_.find(key);
  if (it == cache_.end() || !it->second.source.same_storage(sample.lr)) {
    it = cache_.insert_or_assign(key, CacheEntry{sample.lr, prepare_input(model_.config(), sample.lr)})
             .first;
  }
  return it->second.input;
}

EpochRecord Trainer::train_epoch(const std::vector<Sample>& data) {
  if (data.empty()) throw ContractError("train: no training samples");
  const auto start = std::chrono::steady_clock::now();
  EpochRecord rec;
  rec.epoch = epochs_done_;
  rec.lr = scheduled_lr(config_.lr0, config_.lr_half_every, rec.epoch);
  rec.val_psnr_db = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> losses;
  losses.reserve(data.size());
  for (std::size_t i : epoch_order(data.size(), config_.seed, rec.epoch, config_.shuffle)) {
    const Sample& s = data[i];
    const PreparedInput& in = prepared(s);
    ParamSet& params = model_.mutable_params();
    params.zero_grad();
    double loss_value;
    {
      GradTape tape;
      const Tensor loss = training_loss(model_.forward(in), s.hr, config_.loss);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(rec.epoch) + " on " +
                           s.name);
      }
      tape.backward(loss);
    }
    if (config_.clip_norm > 0.0) {
      const double norm = grad_norm(params);
      if (norm > config_.clip_norm) {
        const double k = config_.clip_norm / norm;
        for (const auto& e : params) {
          for (double& g : e.tensor.grad_accumulator()) g *= k;
        }
      }
    }
    adam_step(params, adam_, rec.lr, config_.adam);
    params.zero_grad();
    losses.push_back(loss_value);
  }
  rec.loss = pairwise_sum(losses) / static_cast<double>(losses.size());
  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ++epochs_done_;
  return rec;
}

TrainReport Trainer::train(const std::vector<Sample>& data, const TrainOptions& options) {
  TrainReport report;
  while (epochs_done_ < config_.epochs) {
    EpochRecord rec = train_epoch(data);
    bool improved = false;
    if (!options.validation.empty()) {
      rec.val_psnr_db = evaluate_samples(model_, options.validation).mean_psnr_db;
      if (std::isnan(best_val_psnr_) || rec.val_psnr_db > best_val_psnr_) {
        best_val_psnr_ = rec.val_psnr_db;
        improved = true;
      }
    }
    if (!options.checkpoint_dir.empty()) {
      const Checkpoint ck = checkpoint();
      save_checkpoint(ck, options.checkpoint_dir / "latest.ckpt");
      if (improved) save_checkpoint(ck, options.checkpoint_dir / "best.ckpt");
    }
    if (options.log != nullptr) {
      *options.log << "epoch " << rec.epoch + 1 << "/" << config_.epochs << " loss " << rec.loss
                   << " lr " << rec.lr << " " << rec.seconds << "s";
      if (!std::isnan(rec.val_psnr_db)) *options.log << " val_psnr " << rec.val_psnr_db;
      *options.log << std::endl;
    }
    report.epochs.push_back(rec);
  }
  return report;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.net = model_.config();
  ck.params = model_.params().clone();
  for (std::size_t i = 0; i < adam_.m.size(); ++i) {
    ck.adam_m.push_back(adam_.m[i].clone());
    ck.adam_v.push_back(adam_.v[i].clone());
  }
  ck.adam_t = adam_.t;
  ck.epoch = epochs_done_;
  ck.lr = scheduled_lr(config_.lr0, config_.lr_half_every, epochs_done_);
  ck.best_metric = best_val_psnr_;
  ck.train_config = train_config_to_json(config_);
  return ck;
}

MetricReport evaluate_samples(const Model& model, const std::vector<Sample>& samples,
                              const SsimWindow& window) {
  NoGradScope no_grad;
  std::vector<ImageMetrics> rows;
  for (const auto& s : samples) {
    const Tensor y = to_peak_scale(s.hr), yhat = to_peak_scale(model.predict(s.lr));
    rows.push_back({s.name, model.config().scale, psnr(y, yhat), ssim(y, yhat, window)});
  }
  return summarize(std::move(rows));
}

double evaluate_mge(const Model& model, const std::vector<Sample>& samples) {
  NoGradScope no_grad;
  std::vector<double> values;
  for (const auto& s : samples) {
    Tensor pred = model.predict(s.lr);
    for (double& v : pred.mutable_data()) v = std::clamp(v, 0.0, 1.0);
    values.push_back(mge(pred, s.hr, 0.0).item());
  }
  return values.empty() ? 0.0 : pairwise_sum(values) / static_cast<double>(values.size());
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "depth,param_count,loss,lambda_g,final_loss,psnr_db,ssim,mge\n";
  for (const auto& r : rows) {
    out << r.depth << ',' << r.param_count << ',' << to_string(r.loss) << ',' << r.lambda_g << ','
        << r.final_loss << ',';
    if (std::isinf(r.psnr_db)) out << "inf";
    else out << r.psnr_db;
    out << ',' << r.ssim << ',' << r.mge << '\n';
  }
  return out.str();
}

namespace {

SweepRow run_setting(const NetConfig& net, const TrainConfig& config,
                     const std::vector<Sample>& train, const std::vector<Sample>& eval,
                     std::ostream* log) {
  Trainer trainer(net, config);
  TrainOptions opts;
  const TrainReport report = trainer.train(train, opts);
  const MetricReport metrics = evaluate_samples(trainer.model(), eval);
  SweepRow row;
  row.depth = net.depth;
  row.param_count = param_count(net);
  row.loss = config.loss.kind;
  row.lambda_g = config.loss.kind == LossKind::mse ? 0.0 : config.loss.lambda_g;
  row.final_loss = report.epochs.back().loss;
  row.psnr_db = metrics.mean_psnr_db;
  row.ssim = metrics.mean_ssim;
  row.mge = evaluate_mge(trainer.model(), eval);
  if (log != nullptr) {
    *log << "depth " << row.depth << " loss " << to_string(row.loss) << " lambda_g "
         << row.lambda_g << " psnr " << row.psnr_db << std::endl;
  }
  return row;
}

}  // namespace

std::vector<SweepRow> sweep_depth(const std::vector<int>& depths, const NetConfig& net,
                                  const TrainConfig& config, const std::vector<Sample>& train,
                                  const std::vector<Sample>& eval, std::ostream* log) {
  if (depths.empty()) throw ConfigError("sweep_depth: empty depth list");
  std::vector<SweepRow> rows;
  for (int d : depths) {
    NetConfig n = net;
    n.depth = d;
    n.validate();
    rows.push_back(run_setting(n, config, train, eval, log));
  }
  return rows;
}

std::vector<SweepRow> sweep_lambda(const std::vector<double>& lambdas, bool include_mse,
                                   const NetConfig& net, const TrainConfig& config,
                                   const std::vector<Sample>& train,
                                   const std::vector<Sample>& eval, std::ostream* log) {
  if (lambdas.empty() && !include_mse) throw ConfigError("sweep_lambda: empty lambda list");
  std::vector<SweepRow> rows;
  if (include_mse) {
    TrainConfig c = config;
    c.loss.kind = LossKind::mse;
    rows.push_back(run_setting(net, c, train, eval, log));
  }
  for (double l : lambdas) {
    TrainConfig c = config;
    c.loss.kind = LossKind::mixge;
    c.loss.lambda_g = l;
    c.validate();
    rows.push_back(run_setting(net, c, train, eval, log));
  }
  return rows;
}

}  // namespace unetsr
