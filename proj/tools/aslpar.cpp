// Command-line front end: data generation, victim training, attacks,
// defense training, evaluation and noise visualisation.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aslpar/attack.hpp"
#include "aslpar/dataset.hpp"
#include "aslpar/defense.hpp"
#include "aslpar/metrics.hpp"
#include "aslpar/model.hpp"
#include "aslpar/parallel.hpp"
#include "aslpar/rng.hpp"
#include "aslpar/run_config.hpp"
#include "aslpar/tensor_io.hpp"
#include "aslpar/training.hpp"

namespace fs = std::filesystem;
using namespace aslpar;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Bad flags or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const std::optional<std::string>& path) {
  if (!path) return RunConfig{};
  try {
    return RunConfig::load(*path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::string require_path(const std::optional<std::string>& flag, const std::optional<std::string>& from_config,
                         const char* name) {
  if (flag) return *flag;
  if (from_config) return *from_config;
  throw UsageError(std::string("missing --") + name);
}

void print_metrics(const char* label, const MetricsReport& r) {
  std::printf("%-10s mA %.4f  acc %.4f  prec %.4f  recall %.4f  F1 %.4f\n", label, r.mean_ap, r.accuracy, r.precision,
              r.recall, r.f1);
}

struct GenDataArgs {
  std::optional<std::string> config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_gen_data(const GenDataArgs& a) {
  if (!a.config) throw UsageError("gen-data requires --config");
  RunConfig rc = load_config(a.config);
  if (a.seed) {
    rc.seed = *a.seed;
    rc.data.seed = *a.seed;
  }
  const SyntheticData data = generate_synthetic(rc.data);
  const DatasetFiles files = write_dataset(data, a.out);
  write_snapshot({{"command", "gen-data"}, {"seed", rc.data.seed}, {"data", rc.data.to_json()}}, fs::path(a.out) / kSnapshotName);
  std::printf("%s\n%s\n", files.train_manifest.string().c_str(), files.test_manifest.string().c_str());
  return 0;
}

struct TrainArgs {
  std::optional<std::string> config, data, test, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  RunConfig rc = load_config(a.config);
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.seed) rc.train.seed = *a.seed;
  const std::string data_path = require_path(a.data, rc.paths.train_manifest, "data");
  const std::string out = require_path(a.out, rc.paths.model, "out");
  const Dataset train = load_manifest(data_path);
  ModelConfig mc = rc.model;
  const Shape img = train.images.front().shape();
  mc.channels = img[0];
  mc.image_height = img[1];
  mc.image_width = img[2];
  mc.attribute_count = train.schema.size();

  const TrainResult result = train_model(train, mc, rc.train);
  save_checkpoint(result.model, out);
  write_text_file(fs::path(out) / "training_curve.csv", curve_csv(result.curve));
  write_snapshot({{"command", "train"},
                  {"seed", rc.train.seed},
                  {"data", data_path},
                  {"model", mc.to_json()},
                  {"train", rc.train.to_json()}},
                 fs::path(out) / kSnapshotName);
  if (!result.curve.empty()) std::printf("final loss %.6f\n", result.curve.back().loss);
  const auto test_path = a.test ? a.test : rc.paths.test_manifest;
  if (test_path) {
    const Dataset test = load_manifest(*test_path);
    print_metrics("test", report(predict_dataset(result.model, test.images), targets_matrix(test.labels)));
  }
  std::printf("checkpoint %s (hash %s)\n", out.c_str(), hex64(hash_params(result.model.params)).c_str());
  return 0;
}

struct AttackArgs {
  std::optional<std::string> config, model, data, out, mode, epsilon;
  std::optional<float> alpha, lr;
  std::optional<std::size_t> epochs, row0, col0;
  std::optional<std::uint64_t> seed;
  bool no_semantic = false, no_label_perturb = false, no_linf = false;
};

int run_attack(const AttackArgs& a) {
  RunConfig rc = load_config(a.config);
  AttackConfig& ac = rc.attack;
  try {
    if (a.mode) ac.mode = parse_noise_mode(*a.mode);
    if (a.epsilon) ac.epsilon = parse_epsilon(*a.epsilon);
    if (a.alpha) ac.alpha = *a.alpha;
    if (a.lr) ac.lr = *a.lr;
    if (a.epochs) ac.epochs = *a.epochs;
    if (a.seed) ac.seed = *a.seed;
    if (a.row0) ac.patch_row0 = *a.row0;
    if (a.col0) ac.patch_col0 = *a.col0;
    if (a.no_semantic) ac.use_semantic = false;
    if (a.no_label_perturb) ac.use_label_perturbation = false;
    if (a.no_linf) ac.use_linf_constraint = false;
    ac.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string model_dir = require_path(a.model, rc.paths.model, "model");
  const std::string data_path = require_path(a.data, rc.paths.train_manifest, "data");
  const std::string out = require_path(a.out, std::nullopt, "out");

  const Model model = load_checkpoint(model_dir);
  const Dataset data = load_manifest(data_path);
  const AttackResult result = train_universal(model, data, ac, [](std::size_t epoch, const Perturbation& p) {
    std::fprintf(stderr, "epoch %zu  max|eta| %.6f\n", epoch, static_cast<double>(p.max_abs()));
  });
  const fs::path noise_path = fs::path(out) / "noise.dtsr";
  save_noise(result, noise_path);
  write_text_file(fs::path(out) / "loss_trace.csv", curve_csv(result.provenance.trace));
  write_snapshot({{"command", "attack"},
                  {"seed", ac.seed},
                  {"model", model_dir},
                  {"data", data_path},
                  {"attack", ac.to_json()}},
                 fs::path(out) / kSnapshotName);
  std::printf("%s (hash %s)\n", noise_path.string().c_str(), hex64(hash_file(noise_path)).c_str());
  return 0;
}

struct DefendArgs {
  std::optional<std::string> config, model, data, out;
  std::vector<std::string> noise;
  std::optional<std::size_t> epochs;
  std::optional<float> lr, filter_lr, max_grad_norm;
  std::optional<std::uint64_t> seed;
  bool no_filter = false, no_prompt = false, no_clean_mix = false;
};

int run_defend(const DefendArgs& a) {
  RunConfig rc = load_config(a.config);
  DefenseConfig& dc = rc.defense;
  try {
    if (a.epochs) dc.epochs = *a.epochs;
    if (a.lr) dc.lr = *a.lr;
    if (a.filter_lr) dc.filter_lr = *a.filter_lr;
    if (a.max_grad_norm) dc.max_grad_norm = *a.max_grad_norm;
    if (a.seed) dc.seed = *a.seed;
    if (a.no_filter) dc.use_filter = false;
    if (a.no_prompt) dc.use_prompt = false;
    if (a.no_clean_mix) dc.mix_clean = false;
    dc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<std::string> noise_paths = a.noise;
  if (noise_paths.empty() && rc.paths.noise) noise_paths.push_back(*rc.paths.noise);
  if (noise_paths.empty()) throw UsageError("missing --noise");
  const std::string model_dir = require_path(a.model, rc.paths.model, "model");
  const std::string data_path = require_path(a.data, rc.paths.train_manifest, "data");
  const std::string out = require_path(a.out, rc.paths.defense, "out");

  const Model model = load_checkpoint(model_dir);
  const Dataset data = load_manifest(data_path);
  std::vector<Perturbation> noises;
  std::string hashes;
  for (const auto& p : noise_paths) {
    noises.push_back(load_noise(p));
    check_noise_compatible(noises.back(), model.config);
    hashes += (hashes.empty() ? "" : ",") + hex64(hash_file(p));
  }
  const DefenseResult result = train_defense(model, noises, data, dc);
  save_defense({result.params, hashes, dc.to_json()}, out);
  write_text_file(fs::path(out) / "training_curve.csv", curve_csv(result.curve));
  write_snapshot({{"command", "defend"},
                  {"seed", dc.seed},
                  {"model", model_dir},
                  {"data", data_path},
                  {"noise", noise_paths},
                  {"defense", dc.to_json()}},
                 fs::path(out) / kSnapshotName);
  std::printf("%s\n", out.c_str());
  return 0;
}

struct EvalArgs {
  std::optional<std::string> config, model, data, noise, defense, report;
  bool instance = false;
};

int run_eval(const EvalArgs& a) {
  RunConfig rc = load_config(a.config);
  const std::string model_dir = require_path(a.model, rc.paths.model, "model");
  const std::string data_path = require_path(a.data, rc.paths.test_manifest, "data");
  const std::string report_path = require_path(a.report, std::nullopt, "report");
  const auto noise_path = a.noise ? a.noise : rc.paths.noise;
  const auto defense_dir = a.defense ? a.defense : rc.paths.defense;

  const Model model = load_checkpoint(model_dir);
  const Dataset data = load_manifest(data_path);
  std::optional<Perturbation> noise;
  if (noise_path) {
    noise = load_noise(*noise_path);
    check_noise_compatible(*noise, model.config);
  }
  std::optional<DefenseArtifact> defense;
  if (defense_dir) {
    defense = load_defense(*defense_dir);
    defense->params.validate(model.config);
    if (noise_path) {
      const std::string hash = hex64(hash_file(*noise_path));
      if (defense->noise_hash.find(hash) == std::string::npos) {
        std::fprintf(stderr, "warning: defense %s was trained against noise %s, evaluating with %s\n",
                     defense_dir->c_str(), defense->noise_hash.c_str(), hash.c_str());
      }
    }
  }
  const Tensor probs = predict_defended(model, data.images, noise ? &*noise : nullptr,
                                        defense ? &defense->params : nullptr);
  ReportOptions opts;
  opts.instance_metrics = a.instance;
  const MetricsReport r = report(probs, targets_matrix(data.labels), opts);
  write_text_file(report_path, report_csv(r, model.schema.names()));
  write_snapshot({{"command", "eval"},
                  {"model", model_dir},
                  {"data", data_path},
                  {"noise", noise_path ? nlohmann::json(*noise_path) : nlohmann::json()},
                  {"defense", defense_dir ? nlohmann::json(*defense_dir) : nlohmann::json()},
                  {"instance_metrics", a.instance}},
                 fs::path(report_path).string() + ".config.json");
  print_metrics("eval", r);
  return 0;
}

struct BaselineArgs {
  std::optional<std::string> model, data, report, method, epsilon;
  std::optional<float> step, momentum;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  bool no_random_start = false;
};

int run_baseline(const BaselineArgs& a) {
  const std::string model_dir = require_path(a.model, std::nullopt, "model");
  const std::string data_path = require_path(a.data, std::nullopt, "data");
  const std::string report_path = require_path(a.report, std::nullopt, "report");
  const std::string method = a.method.value_or("pgd");
  BaselineConfig bc;
  try {
    if (a.epsilon) bc.epsilon = parse_epsilon(*a.epsilon);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.step) bc.step = *a.step;
  if (a.momentum) bc.momentum = *a.momentum;
  if (a.steps) bc.steps = *a.steps;
  if (a.seed) bc.seed = *a.seed;
  bc.random_start = !a.no_random_start;
  if (method != "fgsm" && method != "ifgsm" && method != "mifgsm" && method != "pgd") {
    throw UsageError("unknown method '" + method + "' (expected fgsm, ifgsm, mifgsm or pgd)");
  }

  const Model model = load_checkpoint(model_dir);
  const Dataset data = load_manifest(data_path);
  const ClassWeights weights = compute_weights(data.labels);
  const std::size_t n = model.config.attribute_count;
  Tensor probs(Shape{data.size(), n});
  parallel_for(data.size(), [&](std::size_t i) {
    BaselineConfig per = bc;
    per.seed = derive_seed(bc.seed, i);
    const Tensor& x = data.images[i];
    const LabelVector& y = data.labels[i];
    Tensor adv = method == "fgsm"    ? fgsm(model, x, y, weights, bc.epsilon)
                 : method == "ifgsm" ? ifgsm(model, x, y, weights, per)
                 : method == "mifgsm" ? mifgsm(model, x, y, weights, per)
                                      : pgd(model, x, y, weights, per);
    const ForwardOutput fo = infer(model, adv);
    std::copy_n(fo.probs.ptr(), n, probs.ptr() + i * n);
  });
  const MetricsReport r = report(probs, targets_matrix(data.labels));
  write_text_file(report_path, report_csv(r, model.schema.names()));
  nlohmann::json snap = {{"command", "baseline"}, {"method", method},   {"seed", bc.seed},
                         {"epsilon", bc.epsilon}, {"step", bc.step},     {"steps", bc.steps},
                         {"momentum", bc.momentum}, {"random_start", bc.random_start}};
  write_snapshot(snap, fs::path(report_path).string() + ".config.json");
  print_metrics(method.c_str(), r);
  return 0;
}

struct VisualizeArgs {
  std::optional<std::string> noise, out;
  float amplification = 10.0F;
};

int run_visualize(const VisualizeArgs& a) {
  const std::string noise_path = require_path(a.noise, std::nullopt, "noise");
  const std::string out = require_path(a.out, std::nullopt, "out");
  if (!(a.amplification > 0.0F)) throw UsageError("--amplification must be positive");
  const Perturbation p = load_noise(noise_path);
  std::optional<CanvasPlacement> canvas;
  if (p.mode == NoiseMode::kPatch) canvas = CanvasPlacement{p.image_shape[1], p.image_shape[2], p.row0, p.col0};
  export_noise_image(p.tensor, a.amplification, out, canvas);
  std::printf("%s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal adversarial perturbations and defenses for pedestrian attribute models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "Render the synthetic pedestrian dataset");
  cmd_gen->add_option("--config", gen.config, "Run configuration JSON (its data section is used)");
  cmd_gen->add_option("--out", gen.out, "Output directory")->required();
  cmd_gen->add_option("--seed", gen.seed, "Override the data seed");

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "Train the victim attribute model");
  cmd_train->add_option("--config", train.config, "Run configuration JSON");
  cmd_train->add_option("--data", train.data, "Training manifest");
  cmd_train->add_option("--test", train.test, "Optional test manifest to report on");
  cmd_train->add_option("--out", train.out, "Checkpoint directory");
  cmd_train->add_option("--epochs", train.epochs, "Training epochs");
  cmd_train->add_option("--seed", train.seed, "Seed");

  AttackArgs atk;
  auto* cmd_attack = app.add_subcommand("attack", "Train a universal perturbation against a frozen model");
  cmd_attack->add_option("--config", atk.config, "Run configuration JSON");
  cmd_attack->add_option("--model", atk.model, "Checkpoint directory");
  cmd_attack->add_option("--data", atk.data, "Manifest of images the noise is trained on");
  cmd_attack->add_option("--out", atk.out, "Output directory")->required();
  cmd_attack->add_option("--mode", atk.mode, "global or patch");
  cmd_attack->add_option("--epsilon", atk.epsilon, "L-infinity budget, e.g. 10/255 or 0.039");
  cmd_attack->add_option("--alpha", atk.alpha, "Weight of the similarity loss");
  cmd_attack->add_option("--lr", atk.lr, "Initial learning rate");
  cmd_attack->add_option("--epochs", atk.epochs, "Epochs");
  cmd_attack->add_option("--patch-row", atk.row0, "Patch top row (default: centred)");
  cmd_attack->add_option("--patch-col", atk.col0, "Patch left column (default: centred)");
  cmd_attack->add_option("--seed", atk.seed, "Seed");
  cmd_attack->add_flag("--no-semantic", atk.no_semantic, "Drop the similarity loss term");
  cmd_attack->add_flag("--no-label-perturb", atk.no_label_perturb,
                       "Use true labels and ascend the loss instead of descending toward shifted labels");
  cmd_attack->add_flag("--no-linf", atk.no_linf, "Do not clip the noise to epsilon");

  DefendArgs dfn;
  auto* cmd_defend = app.add_subcommand("defend", "Train the input filter and prompt offsets against a noise");
  cmd_defend->add_option("--config", dfn.config, "Run configuration JSON");
  cmd_defend->add_option("--model", dfn.model, "Checkpoint directory");
  cmd_defend->add_option("--noise", dfn.noise, "Noise file (repeat to train against several)");
  cmd_defend->add_option("--data", dfn.data, "Training manifest");
  cmd_defend->add_option("--out", dfn.out, "Defense directory");
  cmd_defend->add_option("--epochs", dfn.epochs, "Epochs");
  cmd_defend->add_option("--lr", dfn.lr, "Prompt learning rate");
  cmd_defend->add_option("--filter-lr", dfn.filter_lr, "Filter learning rate");
  cmd_defend->add_option("--max-grad-norm", dfn.max_grad_norm, "Gradient norm cap per parameter group (0 disables)");
  cmd_defend->add_option("--seed", dfn.seed, "Seed");
  cmd_defend->add_flag("--no-filter", dfn.no_filter, "Train prompt offsets only");
  cmd_defend->add_flag("--no-prompt", dfn.no_prompt, "Train the filter only");
  cmd_defend->add_flag("--no-clean-mix", dfn.no_clean_mix, "Train on noisy images only");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Write a metrics report");
  cmd_eval->add_option("--config", ev.config, "Run configuration JSON");
  cmd_eval->add_option("--model", ev.model, "Checkpoint directory");
  cmd_eval->add_option("--data", ev.data, "Manifest to evaluate");
  cmd_eval->add_option("--noise", ev.noise, "Noise applied to every image");
  cmd_eval->add_option("--defense", ev.defense, "Defense directory");
  cmd_eval->add_option("--report", ev.report, "Output CSV");
  cmd_eval->add_flag("--instance-metrics", ev.instance, "Also report label-based mA and instance-based metrics");

  BaselineArgs base;
  auto* cmd_base = app.add_subcommand("baseline", "Evaluate a per-image gradient attack");
  cmd_base->add_option("--model", base.model, "Checkpoint directory");
  cmd_base->add_option("--data", base.data, "Manifest to attack");
  cmd_base->add_option("--report", base.report, "Output CSV");
  cmd_base->add_option("--method", base.method, "fgsm, ifgsm, mifgsm or pgd");
  cmd_base->add_option("--epsilon", base.epsilon, "L-infinity budget");
  cmd_base->add_option("--step", base.step, "Step size");
  cmd_base->add_option("--steps", base.steps, "Iterations");
  cmd_base->add_option("--momentum", base.momentum, "MI-FGSM momentum");
  cmd_base->add_option("--seed", base.seed, "Seed for random starts");
  cmd_base->add_flag("--no-random-start", base.no_random_start, "PGD starts from the clean image");

  VisualizeArgs vis;
  auto* cmd_vis = app.add_subcommand("visualize", "Export a noise file as a PPM image");
  cmd_vis->add_option("--noise", vis.noise, "Noise file");
  cmd_vis->add_option("--out", vis.out, "Output .ppm");
  cmd_vis->add_option("--amplification", vis.amplification, "Scale applied before mapping to [0, 1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (cmd_gen->parsed()) return run_gen_data(gen);
    if (cmd_train->parsed()) return run_train(train);
    if (cmd_attack->parsed()) return run_attack(atk);
    if (cmd_defend->parsed()) return run_defend(dfn);
    if (cmd_eval->parsed()) return run_eval(ev);
    if (cmd_base->parsed()) return run_baseline(base);
    if (cmd_vis->parsed()) return run_visualize(vis);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
