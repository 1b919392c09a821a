#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "unetsr/checkpoint.hpp"
#include "unetsr/error.hpp"
#include "unetsr/image.hpp"
#include "unetsr/metrics.hpp"
#include "unetsr/model.hpp"
#include "unetsr/pairs.hpp"
#include "unetsr/resample.hpp"
#include "unetsr/tensor.hpp"
#include "unetsr/trainer.hpp"
#include "unetsr/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unetsr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Everything `train` and the sweeps need. Config-file keys use these names.
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  std::string pairs;
  std::string val_pairs;
  std::uint64_t val_holdout = 0;
  std::string out = "run";
  std::string resume;
};

// Flag values; set only when given on the command line.
struct RunFlags {
  std::string config;
  std::optional<std::string> pairs, val_pairs, out, resume, loss;
  std::optional<int> depth, scale, base_width, width_cap;
  std::optional<std::uint64_t> seed, epochs, lr_half_every, val_holdout;
  std::optional<double> lambda_g, lr0, clip_norm, sqrt_epsilon;
  bool no_shuffle = false;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (!p.parent_path().empty()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

void apply_config_file(RunConfig& rc, const fs::path& file) {
  json j;
  try {
    j = json::parse(read_text(file));
  } catch (const json::parse_error& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(file.string() + ": top level must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "pairs") rc.pairs = get_as<std::string>(v, key);
    else if (key == "val_pairs") rc.val_pairs = get_as<std::string>(v, key);
    else if (key == "val_holdout") rc.val_holdout = get_as<std::uint64_t>(v, key);
    else if (key == "out") rc.out = get_as<std::string>(v, key);
    else if (key == "resume") rc.resume = get_as<std::string>(v, key);
    else if (key == "depth") rc.net.depth = get_as<int>(v, key);
    else if (key == "scale") rc.net.scale = get_as<int>(v, key);
    else if (key == "base_width") rc.net.base_width = get_as<int>(v, key);
    else if (key == "width_cap") rc.net.width_cap = get_as<int>(v, key);
    else if (key == "seed") rc.net.seed = rc.train.seed = get_as<std::uint64_t>(v, key);
    else if (key == "epochs") rc.train.epochs = get_as<std::uint64_t>(v, key);
    else if (key == "lr0") rc.train.lr0 = get_as<double>(v, key);
    else if (key == "lr_half_every") rc.train.lr_half_every = get_as<std::uint64_t>(v, key);
    else if (key == "beta1") rc.train.adam.beta1 = get_as<double>(v, key);
    else if (key == "beta2") rc.train.adam.beta2 = get_as<double>(v, key);
    else if (key == "adam_eps") rc.train.adam.eps = get_as<double>(v, key);
    else if (key == "batch_size") rc.train.batch_size = get_as<std::uint64_t>(v, key);
    else if (key == "loss") rc.train.loss.kind = parse_loss_kind(get_as<std::string>(v, key));
    else if (key == "lambda_g") rc.train.loss.lambda_g = get_as<double>(v, key);
    else if (key == "sqrt_epsilon") rc.train.loss.sqrt_epsilon = get_as<double>(v, key);
    else if (key == "shuffle") rc.train.shuffle = get_as<bool>(v, key);
    else if (key == "clip_norm") rc.train.clip_norm = get_as<double>(v, key);
    else throw ConfigError(file.string() + ": unknown key '" + key + "'");
  }
}

RunConfig resolve(const RunFlags& f) {
  RunConfig rc;
  if (!f.config.empty()) apply_config_file(rc, f.config);
  if (f.pairs) rc.pairs = *f.pairs;
  if (f.val_pairs) rc.val_pairs = *f.val_pairs;
  if (f.out) rc.out = *f.out;
  if (f.resume) rc.resume = *f.resume;
  if (f.depth) rc.net.depth = *f.depth;
  if (f.scale) rc.net.scale = *f.scale;
  if (f.base_width) rc.net.base_width = *f.base_width;
  if (f.width_cap) rc.net.width_cap = *f.width_cap;
  if (f.seed) rc.net.seed = rc.train.seed = *f.seed;
  if (f.epochs) rc.train.epochs = *f.epochs;
  if (f.lr_half_every) rc.train.lr_half_every = *f.lr_half_every;
  if (f.val_holdout) rc.val_holdout = *f.val_holdout;
  if (f.loss) rc.train.loss.kind = parse_loss_kind(*f.loss);
  if (f.lambda_g) rc.train.loss.lambda_g = *f.lambda_g;
  if (f.lr0) rc.train.lr0 = *f.lr0;
  if (f.clip_norm) rc.train.clip_norm = *f.clip_norm;
  if (f.sqrt_epsilon) rc.train.loss.sqrt_epsilon = *f.sqrt_epsilon;
  if (f.no_shuffle) rc.train.shuffle = false;
  rc.net.validate();
  rc.train.validate();
  if (!rc.val_pairs.empty() && rc.val_holdout > 0) {
    throw ConfigError("use either val_pairs or val_holdout, not both");
  }
  return rc;
}

void add_run_flags(CLI::App& cmd, RunFlags& f, bool with_paths) {
  const NetConfig net;
  const TrainConfig tr;
  cmd.add_option("--config", f.config, "JSON file with any of the flag settings (keys use underscores); flags win")
      ->check(CLI::ExistingFile);
  if (with_paths) {
    cmd.add_option("--pairs", f.pairs, "Training manifest (pairs.json)");
    cmd.add_option("--val-pairs", f.val_pairs, "Validation manifest; enables best.ckpt");
    cmd.add_option("--val-holdout", f.val_holdout,
                   "Hold out this many seeded-random training pairs for validation (default 0)");
    cmd.add_option("--out", f.out, "Output directory for checkpoints and reports (default run)");
    cmd.add_option("--resume", f.resume, "Continue from a checkpoint written by train");
  } else {
    cmd.add_option("--pairs", f.pairs, "Training manifest (pairs.json)");
  }
  cmd.add_option("--depth", f.depth,
                 fmt::format("Encoder/decoder stages (default {}) [protocol default]", net.depth));
  cmd.add_option("--scale", f.scale, fmt::format("Magnification 2, 4 or 8 (default {})", net.scale))
      ->check(CLI::IsMember({2, 4, 8}));
  cmd.add_option("--base-width", f.base_width,
                 fmt::format("Channels after the first block (default {})", net.base_width));
  cmd.add_option("--width-cap", f.width_cap,
                 fmt::format("Upper bound on channel width (default {})", net.width_cap));
  cmd.add_option("--seed", f.seed,
                 fmt::format("Seeds initialisation and shuffling (default {})", net.seed));
  cmd.add_option("--epochs", f.epochs, fmt::format("Training epochs (default {})", tr.epochs));
  cmd.add_option("--lr0", f.lr0,
                 fmt::format("Initial learning rate (default {}) [protocol default]", tr.lr0));
  cmd.add_option("--lr-half-every", f.lr_half_every,
                 fmt::format("Halve the learning rate every N epochs (default {}) [protocol default]",
                             tr.lr_half_every));
  cmd.add_option("--loss", f.loss, "mse or mixge (default mixge)")
      ->check(CLI::IsMember({"mse", "mixge"}));
  cmd.add_option("--lambda-g", f.lambda_g,
                 fmt::format("Weight of the gradient term (default {}) [protocol default]",
                             tr.loss.lambda_g));
  cmd.add_option("--sqrt-epsilon", f.sqrt_epsilon,
                 fmt::format("Stabiliser inside the gradient magnitude (default {})",
                             tr.loss.sqrt_epsilon));
  cmd.add_option("--clip-norm", f.clip_norm,
                 "Clip the global gradient norm to this value (default 0 = off)");
  cmd.add_flag("--no-shuffle", f.no_shuffle, "Visit training pairs in manifest order");
  cmd.footer(
      "Adam uses beta1 0.9, beta2 0.999, eps 1e-8 and batch size 1 [protocol default]; set "
      "beta1/beta2/adam_eps in --config to change them.");
}

void require_scale(const PairManifest& m, int scale, const std::string& what) {
  if (m.empty()) throw ConfigError(what + " is empty");
  for (const auto& e : m.entries) {
    if (e.scale != scale) {
      throw ConfigError(what + " holds scale " + std::to_string(e.scale) +
                        " pairs but the network scale is " + std::to_string(scale));
    }
  }
}

int cmd_pair_gen(const std::string& src, const std::string& out, int scale, std::size_t target) {
  const PairGenResult r = make_pairs(src, out, scale, target);
  for (const auto& w : r.warnings) fmt::print(std::cerr, "warning: {}\n", w);
  fmt::print("{} pairs, manifest {}\n", r.manifest.size(), r.manifest_path.string());
  return kExitOk;
}

int cmd_train(const RunFlags& flags) {
  RunConfig rc = resolve(flags);
  std::optional<Trainer> trainer;
  if (!rc.resume.empty()) {
    trainer.emplace(load_checkpoint(rc.resume));
    if (flags.epochs) trainer->set_total_epochs(rc.train.epochs);
    rc.net = trainer->model().config();
  } else {
    trainer.emplace(rc.net, rc.train);
  }
  if (rc.pairs.empty()) throw ConfigError("train needs --pairs (or \"pairs\" in --config)");
  const PairManifest manifest = load_manifest(rc.pairs);
  require_scale(manifest, rc.net.scale, rc.pairs);
  std::vector<Sample> data = load_samples(manifest);

  TrainOptions opts;
  opts.checkpoint_dir = rc.out;
  opts.log = &std::cerr;
  if (!rc.val_pairs.empty()) {
    const PairManifest val = load_manifest(rc.val_pairs);
    require_scale(val, rc.net.scale, rc.val_pairs);
    opts.validation = load_samples(val);
  } else if (rc.val_holdout > 0) {
    opts.validation = split_holdout(data, rc.val_holdout, trainer->config().seed);
  }
  fmt::print(std::cerr, "training {} pairs, {} parameters, epochs {}..{}\n", data.size(),
             param_count(rc.net), trainer->epochs_done() + 1, trainer->config().epochs);
  const TrainReport report = trainer->train(data, opts);
  write_text(fs::path(rc.out) / "train_report.csv", report.csv());
  write_text(fs::path(rc.out) / "train_report.json", report.json());
  fmt::print("{}\n", (fs::path(rc.out) / "latest.ckpt").string());
  return kExitOk;
}

Model load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  return Model(ck.net, std::move(ck.params));
}

int cmd_eval(const std::string& pairs_path, const std::string& ckpt, bool bicubic,
             const std::string& pred_dir, const std::string& csv_path,
             const std::string& json_path, const std::string& form) {
  const int sources = !ckpt.empty() + bicubic + !pred_dir.empty();
  if (sources != 1) throw ConfigError("eval needs exactly one of --ckpt, --bicubic, --pred-dir");
  const PairManifest pairs = load_manifest(pairs_path);
  if (pairs.empty()) throw ConfigError(pairs_path + " is empty");
  SsimWindow window;
  window.form = form == "covariance" ? SsimForm::covariance : SsimForm::deviation_product;

  Predictor predict;
  std::optional<Model> model;
  if (!ckpt.empty()) {
    model.emplace(load_model(ckpt));
    require_scale(pairs, model->config().scale, pairs_path);
    predict = [&](const Tensor& lr, const PairEntry&) { return model->predict(lr); };
  } else if (bicubic) {
    predict = [](const Tensor& lr, const PairEntry& e) {
      const auto s = static_cast<std::size_t>(e.scale);
      return bicubic_resize(lr, lr.dim(2) * s, lr.dim(3) * s);
    };
  } else {
    predict = [&](const Tensor&, const PairEntry& e) {
      return to_tensor(decode_image(fs::path(pred_dir) / e.hr.filename()));
    };
  }
  const MetricReport report = evaluate_pairs(pairs, predict, window);
  const std::string csv = report_csv(report), summary = report_json(report);
  if (csv_path.empty()) std::cout << csv;
  else write_text(csv_path, csv);
  if (!json_path.empty()) write_text(json_path, summary);
  std::cerr << summary;
  return kExitOk;
}

int cmd_sr(const std::string& ckpt, const std::string& in, const std::string& out) {
  const Model model = load_model(ckpt);
  const ImageBuf lr = decode_image(in);
  Tensor pred;
  {
    NoGradScope no_grad;
    pred = model.predict(to_tensor(lr));
  }
  encode_png(from_tensor(pred), out);
  fmt::print("{}x{} -> {}x{} {}\n", lr.width, lr.height, pred.dim(3), pred.dim(2), out);
  return kExitOk;
}

int cmd_gradcheck(const std::string& module, const std::string& fault) {
  if (!fault.empty()) set_backward_fault(fault);
  const auto cases = run_gradcheck(module);
  set_backward_fault("");
  std::size_t failed = 0;
  for (const auto& c : cases) {
    fmt::print("{} {:<6} {:<40} max_rel_err {:.3e} tol {:.0e} checked {}{}\n",
               c.report.pass ? "PASS" : "FAIL", c.suite, c.name, c.report.max_rel_err,
               c.tolerance, c.report.checked,
               c.report.pass ? "" : " worst " + c.report.worst);
    failed += !c.report.pass;
  }
  fmt::print("{} of {} checks passed\n", cases.size() - failed, cases.size());
  return failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_param_count(NetConfig net, bool as_json) {
  net.validate();
  const auto layers = layer_table(net);
  const std::size_t total = param_count(net);
  if (as_json) {
    json rows = json::array();
    for (const auto& l : layers) {
      rows.push_back({{"name", l.name},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"kernel", l.kernel},
                      {"params", l.params()}});
    }
    const json j = {{"depth", net.depth},           {"scale", net.scale},
                    {"base_width", net.base_width}, {"width_cap", net.width_cap},
                    {"layers", rows},               {"total", total}};
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  fmt::print("{:<14} {:>6} {:>6} {:>6} {:>12}\n", "layer", "in", "out", "kernel", "params");
  for (const auto& l : layers) {
    fmt::print("{:<14} {:>6} {:>6} {:>6} {:>12}\n", l.name, l.in_channels, l.out_channels,
               l.kernel, l.params());
  }
  fmt::print("{:<14} {:>33}\n", "total", total);
  return kExitOk;
}

struct SweepInputs {
  RunConfig rc;
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

SweepInputs sweep_inputs(const RunFlags& flags, const std::string& eval_pairs) {
  SweepInputs s{resolve(flags), {}, {}};
  if (s.rc.pairs.empty()) throw ConfigError("sweeps need --pairs");
  const PairManifest train = load_manifest(s.rc.pairs);
  require_scale(train, s.rc.net.scale, s.rc.pairs);
  s.train = load_samples(train);
  if (eval_pairs.empty()) {
    s.eval = s.train;
  } else {
    const PairManifest eval = load_manifest(eval_pairs);
    require_scale(eval, s.rc.net.scale, eval_pairs);
    s.eval = load_samples(eval);
  }
  return s;
}

void emit_csv(const std::string& path, const std::string& csv) {
  if (path.empty()) std::cout << csv;
  else write_text(path, csv);
}

int run(int argc, char** argv) {
  CLI::App app{"Single-image super-resolution with a modified U-net and a mixed gradient loss"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "unetsr 1.0");

  std::string src, out_dir;
  int scale = 2;
  std::size_t target = kPairTargetExtent;
  auto* pair_gen = app.add_subcommand("pair-gen", "Build HR/LR training pairs and a manifest");
  pair_gen->add_option("--src", src, "Directory of PNG/JPEG/BMP images")->required();
  pair_gen->add_option("--out", out_dir, "Output root")->required();
  pair_gen->add_option("--scale", scale, "LR = target / scale")
      ->check(CLI::IsMember({2, 4, 8}))
      ->capture_default_str();
  pair_gen->add_option("--target", target, "HR edge length [protocol default]")
      ->capture_default_str();

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "Train a model; writes latest.ckpt, best.ckpt and reports");
  add_run_flags(*train, train_flags, true);

  std::string eval_pairs, eval_ckpt, pred_dir, csv_path, json_path, ssim_form = "covariance";
  bool bicubic = false;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of predictions against the HR images");
  eval->add_option("--pairs", eval_pairs, "Manifest to score")->required();
  eval->add_option("--ckpt", eval_ckpt, "Predict with this checkpoint");
  eval->add_flag("--bicubic", bicubic, "Score bicubic upscaling instead of a model");
  eval->add_option("--pred-dir", pred_dir,
                   "Score ready-made predictions named like the HR files in this directory");
  eval->add_option("--csv", csv_path, "Per-image CSV (default stdout)");
  eval->add_option("--json", json_path, "Summary JSON (always echoed to stderr)");
  eval->add_option("--ssim-form", ssim_form,
                   "covariance, or deviation-product (2 sigma_x sigma_y in the structure term)")
      ->check(CLI::IsMember({"covariance", "deviation-product"}))
      ->capture_default_str();

  std::string sr_ckpt, sr_in, sr_out;
  auto* sr = app.add_subcommand("sr", "Super-resolve one image to PNG");
  sr->add_option("--ckpt", sr_ckpt, "Checkpoint")->required();
  sr->add_option("--in", sr_in, "Input image")->required();
  sr->add_option("--out", sr_out, "Output PNG")->required();

  std::string gc_module = "all", gc_fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "Autograd vs finite differences; exit 1 on failure");
  gradcheck->add_option("--module", gc_module, "Suite to run")
      ->check(CLI::IsMember({"all", "ops", "loss", "model"}))
      ->capture_default_str();
  gradcheck->add_option("--inject-fault", gc_fault,
                        "Distort the backward pass of this op (e.g. conv2d) to see the checks fail");

  NetConfig pc_net;
  bool pc_json = false;
  auto* pcount = app.add_subcommand("param-count", "Parameter total and per-layer table");
  pcount->add_option("--depth", pc_net.depth, "Encoder/decoder stages")->capture_default_str();
  pcount->add_option("--scale", pc_net.scale, "Magnification")
      ->check(CLI::IsMember({2, 4, 8}))
      ->capture_default_str();
  pcount->add_option("--base-width", pc_net.base_width, "Channels after the first block")
      ->capture_default_str();
  pcount->add_option("--width-cap", pc_net.width_cap, "Upper bound on channel width")
      ->capture_default_str();
  pcount->add_flag("--json", pc_json, "Emit JSON instead of a table");

  RunFlags sweep_d_flags;
  std::vector<int> depths{2, 3, 4, 5, 6, 7, 8};
  std::string sweep_d_eval, sweep_d_csv;
  auto* sweep_d = app.add_subcommand("sweep-depth", "Train one model per depth and score it");
  add_run_flags(*sweep_d, sweep_d_flags, false);
  sweep_d->add_option("--depths", depths, "Depth grid")->delimiter(',')->capture_default_str();
  sweep_d->add_option("--eval-pairs", sweep_d_eval, "Manifest to score on (default: --pairs)");
  sweep_d->add_option("--csv", sweep_d_csv, "Output CSV (default stdout)");

  RunFlags sweep_l_flags;
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::string sweep_l_eval, sweep_l_csv;
  bool no_mse = false;
  auto* sweep_l = app.add_subcommand("sweep-lambda", "Train one model per gradient-loss weight");
  add_run_flags(*sweep_l, sweep_l_flags, false);
  sweep_l->add_option("--lambdas", lambdas, "Weight grid [protocol default]")
      ->delimiter(',')
      ->capture_default_str();
  sweep_l->add_flag("--no-mse-baseline", no_mse, "Skip the MSE-only row");
  sweep_l->add_option("--eval-pairs", sweep_l_eval, "Manifest to score on (default: --pairs)");
  sweep_l->add_option("--csv", sweep_l_csv, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*pair_gen) return cmd_pair_gen(src, out_dir, scale, target);
    if (*train) return cmd_train(train_flags);
    if (*eval) {
      return cmd_eval(eval_pairs, eval_ckpt, bicubic, pred_dir, csv_path, json_path, ssim_form);
    }
    if (*sr) return cmd_sr(sr_ckpt, sr_in, sr_out);
    if (*gradcheck) return cmd_gradcheck(gc_module, gc_fault);
    if (*pcount) return cmd_param_count(pc_net, pc_json);
    if (*sweep_d) {
      const SweepInputs s = sweep_inputs(sweep_d_flags, sweep_d_eval);
      emit_csv(sweep_d_csv, sweep_csv(sweep_depth(depths, s.rc.net, s.rc.train, s.train, s.eval,
                                                  &std::cerr)));
      return kExitOk;
    }
    if (*sweep_l) {
      const SweepInputs s = sweep_inputs(sweep_l_flags, sweep_l_eval);
      emit_csv(sweep_l_csv, sweep_csv(sweep_lambda(lambdas, !no_mse, s.rc.net, s.rc.train,
                                                   s.train, s.eval, &std::cerr)));
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
