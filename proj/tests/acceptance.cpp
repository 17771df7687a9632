// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aslpar/attack.hpp"
#include "aslpar/dataset.hpp"
#include "aslpar/defense.hpp"
#include "aslpar/labels.hpp"
#include "aslpar/losses.hpp"
#include "aslpar/metrics.hpp"
#include "aslpar/model.hpp"
#include "aslpar/tensor_io.hpp"
#include "aslpar/training.hpp"
#include "gradient_cases.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace aslpar;
using namespace aslpar::testing;

namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3};
// Victim B of the transfer check is trained from seed + kVictimBOffset.
constexpr std::uint64_t kVictimBOffset = 100;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report_line(int id, const char* name, const Verdict& v) {
  std::printf("criterion %2d %-28s %s  %s\n", id, name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

float budget_limit(float epsilon) { return std::nextafter(epsilon, std::numeric_limits<float>::infinity()); }

float max_delta(const Tensor& a, const Tensor& b) {
  float m = 0.0F;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double f1_of(const Model& model, const Dataset& test, const Perturbation* noise = nullptr,
             const DefenseParams* defense = nullptr, double* mean_ap = nullptr) {
  const MetricsReport r = report(predict_defended(model, test.images, noise, defense), targets_matrix(test.labels));
  if (mean_ap != nullptr) *mean_ap = r.mean_ap;
  return r.f1;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& c : gradient_cases(seed)) {
      const GradCheck r = check_gradients(c.inputs, c.fn, c.ref, derive_seed(seed, 99));
      checked += r.checked;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = c.name + " seed " + std::to_string(seed);
      }
    }
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = worst <= 1e-3 && secs < 60.0;
  v.detail = fmt("max rel error %.3g (%s) over %zu entries, %.1f s", worst, worst_case.c_str(), checked, secs);
  return v;
}

Verdict label_oracle() {
  std::size_t vectors = 0, violations = 0;
  std::string first;
  for (const auto& sizes : {std::vector<std::size_t>{1, 3}, std::vector<std::size_t>{1, 2, 3, 3, 2, 1}}) {
    const AttributeSchema schema = AttributeSchema::from_group_sizes(sizes);
    const std::size_t n = schema.size();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      for (std::uint64_t bits = 0; bits < (1ULL << n); ++bits) {
        LabelVector y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::uint8_t>((bits >> i) & 1U);
        const auto bad = oracle::label_rule_violations(y, perturb_labels(y, schema, seed).bits, schema);
        ++vectors;
        violations += bad.size();
        if (!bad.empty() && first.empty()) first = bad.front();
      }
    }
  }
  Verdict v;
  v.pass = violations == 0;
  v.detail = fmt("%zu label vectors, %zu violations%s%s", vectors, violations, first.empty() ? "" : ": ", first.c_str());
  return v;
}

Verdict metrics_oracle() {
  double worst = 0.0;
  Rng rng = make_rng(4242);
  std::uniform_int_distribution<std::size_t> rows(1, 20), cols(1, 8);
  std::uniform_real_distribution<float> unit(0.0F, 1.0F);
  std::bernoulli_distribution coin(0.5), coarse(0.3);
  for (int k = 0; k < 100; ++k) {
    const std::size_t m = rows(rng), n = cols(rng);
    Tensor s(Shape{m, n}), t(Shape{m, n});
    for (std::size_t i = 0; i < s.size(); ++i) {
      // Some scores land on a coarse grid so ties are exercised.
      const float u = unit(rng);
      s[i] = coarse(rng) ? std::round(u * 4.0F) / 4.0F : u;
      t[i] = coin(rng) ? 1.0F : 0.0F;
    }
    const MetricsReport r = report(s, t);
    const oracle::BruteMetrics b = oracle::brute_metrics(s, t);
    for (double d : {r.mean_ap - b.mean_ap, r.accuracy - b.accuracy, r.precision - b.precision, r.recall - b.recall,
                     r.f1 - b.f1}) {
      worst = std::max(worst, std::fabs(d));
    }
    for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::fabs(r.ap[j].value - b.ap[j]));
  }

  const Tensor s(Shape{8, 1}, std::vector<float>{0.9F, 0.1F, 0.8F, 0.2F, 0.3F, 0.7F, 0.2F, 0.1F});
  const Tensor t(Shape{8, 1}, std::vector<float>{1, 0, 1, 1, 1, 0, 0, 0});
  const MetricsReport w = report(s, t);
  const AttributeCounts c = w.counts.total();
  const bool example = c.tp == 2 && c.tn == 3 && c.fp == 1 && c.fn == 2 && std::fabs(w.accuracy - 0.625) <= 1e-12 &&
                       std::fabs(w.precision - 2.0 / 3.0) <= 1e-12 && std::fabs(w.recall - 0.5) <= 1e-12 &&
                       std::fabs(w.f1 - 4.0 / 7.0) <= 1e-12;
  Verdict v;
  v.pass = worst <= 1e-9 && example;
  v.detail = fmt("100 random instances, max diff %.3g; worked example %s", worst, example ? "ok" : "WRONG");
  return v;
}

// ---------------------------------------------------------------------------

/// Everything trained for one seed.
struct SeedRun {
  std::uint64_t seed = 0;
  Model victim;
  Model victim_b;
  Perturbation global, patch, unconstrained;
  DefenseParams defense, filter_only;
  double pipeline_seconds = 0.0;
  float worst_epoch_budget = 0.0F;
  double clean_f1 = 0, clean_ma = 0, attacked_f1 = 0, attacked_ma = 0;
  double patch_f1 = 0, unconstrained_f1 = 0;
  double defended_f1 = 0, filter_only_f1 = 0, defended_clean_f1 = 0;
  double b_clean_f1 = 0, b_attacked_f1 = 0;
  std::size_t patch_outside_nonzero = 0;
};

SeedRun run_seed(const SyntheticData& data, std::uint64_t seed) {
  SeedRun r;
  r.seed = seed;
  const Dataset& train = data.train;
  const Dataset& test = data.test;
  auto epoch_budget = [&](std::size_t, const Perturbation& eta) {
    r.worst_epoch_budget = std::max(r.worst_epoch_budget, eta.max_abs());
  };

  const auto t0 = Clock::now();
  TrainConfig tc;
  tc.seed = seed;
  r.victim = train_model(train, ModelConfig{}, tc).model;
  AttackConfig ac;
  ac.seed = seed;
  r.global = train_universal(r.victim, train, ac, epoch_budget).noise;
  r.clean_f1 = f1_of(r.victim, test, nullptr, nullptr, &r.clean_ma);
  r.attacked_f1 = f1_of(r.victim, test, &r.global, nullptr, &r.attacked_ma);
  r.pipeline_seconds = seconds_since(t0);
  std::printf("  seed %llu: victim F1 %.4f mA %.4f, attacked F1 %.4f mA %.4f (%.0f s)\n",
              static_cast<unsigned long long>(seed), r.clean_f1, r.clean_ma, r.attacked_f1, r.attacked_ma,
              r.pipeline_seconds);

  AttackConfig pc = ac;
  pc.mode = NoiseMode::kPatch;
  r.patch = train_universal(r.victim, train, pc, epoch_budget).noise;
  r.patch_f1 = f1_of(r.victim, test, &r.patch);
  const std::size_t h = r.patch.image_shape[1], w = r.patch.image_shape[2];
  for (const Tensor& x : test.images) {
    const Tensor noisy = apply_noise(x, r.patch);
    for (std::size_t c = 0; c < r.patch.image_shape[0]; ++c) {
      for (std::size_t row = 0; row < h; ++row) {
        for (std::size_t col = 0; col < w; ++col) {
          const bool inside = row >= r.patch.row0 && row < r.patch.row0 + r.patch.tensor.dim(1) &&
                              col >= r.patch.col0 && col < r.patch.col0 + r.patch.tensor.dim(2);
          const std::size_t i = (c * h + row) * w + col;
          if (!inside && noisy[i] - x[i] != 0.0F) ++r.patch_outside_nonzero;
        }
      }
    }
  }

  AttackConfig uc = ac;
  uc.use_linf_constraint = false;
  r.unconstrained = train_universal(r.victim, train, uc).noise;
  r.unconstrained_f1 = f1_of(r.victim, test, &r.unconstrained);
  std::printf("  seed %llu: patch F1 %.4f, unconstrained F1 %.4f (max |eta| %.4f)\n",
              static_cast<unsigned long long>(seed), r.patch_f1, r.unconstrained_f1, r.unconstrained.max_abs());

  DefenseConfig dc;
  dc.seed = seed;
  r.defense = train_defense(r.victim, {r.global}, train, dc).params;
  DefenseConfig fc = dc;
  fc.use_prompt = false;
  r.filter_only = train_defense(r.victim, {r.global}, train, fc).params;
  r.defended_f1 = f1_of(r.victim, test, &r.global, &r.defense);
  r.filter_only_f1 = f1_of(r.victim, test, &r.global, &r.filter_only);
  r.defended_clean_f1 = f1_of(r.victim, test, nullptr, &r.defense);
  std::printf("  seed %llu: defended F1 %.4f, filter-only F1 %.4f, defended clean F1 %.4f\n",
              static_cast<unsigned long long>(seed), r.defended_f1, r.filter_only_f1, r.defended_clean_f1);

  TrainConfig tb = tc;
  tb.seed = seed + kVictimBOffset;
  r.victim_b = train_model(train, ModelConfig{}, tb).model;
  r.b_clean_f1 = f1_of(r.victim_b, test);
  r.b_attacked_f1 = f1_of(r.victim_b, test, &r.global);
  std::printf("  seed %llu: victim B F1 %.4f, with A's noise %.4f\n", static_cast<unsigned long long>(seed),
              r.b_clean_f1, r.b_attacked_f1);
  std::fflush(stdout);
  return r;
}

Verdict baselines(const SeedRun& run, const SyntheticData& data, float* worst_budget) {
  const ClassWeights weights = compute_weights(data.train.labels);
  const float eps = kDefaultEpsilon;
  std::size_t checked = 0, mismatches = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const Tensor& x = data.test.images[i];
    const LabelVector& y = data.test.labels[i];
    const Tensor f = fgsm(run.victim, x, y, weights, eps);
    BaselineConfig one;
    one.steps = 1;
    one.step = eps;
    one.random_start = false;
    if (!(pgd(run.victim, x, y, weights, one) == f)) ++mismatches;

    BaselineConfig iter;
    BaselineConfig flat = iter;
    flat.momentum = 0.0F;
    const Tensor it = ifgsm(run.victim, x, y, weights, iter);
    if (!(mifgsm(run.victim, x, y, weights, flat) == it)) ++mismatches;

    BaselineConfig rs = iter;
    rs.seed = derive_seed(run.seed, i);
    for (const Tensor& adv : {f, it, mifgsm(run.victim, x, y, weights, iter), pgd(run.victim, x, y, weights, rs)}) {
      *worst_budget = std::max(*worst_budget, max_delta(adv, x));
      ++checked;
    }
  }
  Verdict v;
  v.pass = mismatches == 0 && *worst_budget <= budget_limit(eps);
  v.detail = fmt("%zu reduction mismatches, %zu outputs, max |adv - x| %.9g (eps %.9g)", mismatches, checked,
                 static_cast<double>(*worst_budget), static_cast<double>(eps));
  return v;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file_bytes(e.path());
  }
  return out;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  const auto ta = tree_bytes(a), tb = tree_bytes(b);
  return !ta.empty() && ta == tb;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "aslpar_acceptance_determinism";
  fs::remove_all(root);
  SyntheticConfig sc;
  sc.train_count = 96;
  sc.test_count = 16;
  sc.seed = 11;
  TrainConfig tc;
  tc.epochs = 2;
  tc.warmup_epochs = 1;
  tc.seed = 12;
  AttackConfig ac;
  ac.epochs = 2;
  ac.warmup_epochs = 1;
  ac.seed = 13;
  DefenseConfig dc;
  dc.epochs = 2;
  dc.warmup_epochs = 1;
  dc.seed = 14;

  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    const SyntheticData data = generate_synthetic(sc);
    write_dataset(data, dir / "data");
    const Model model = train_model(data.train, ModelConfig{}, tc).model;
    save_checkpoint(model, dir / "model");
    const AttackResult noise = train_universal(model, data.train, ac);
    save_noise(noise, dir / "noise" / "noise.dtsr");
    const DefenseResult def = train_defense(model, {noise.noise}, data.train, dc);
    save_defense({def.params, hex64(hash_tensor(noise.noise.tensor)), dc.to_json()}, dir / "defense");
  }
  std::vector<std::string> differing;
  for (const char* part : {"data", "model", "noise", "defense"}) {
    if (!same_tree(root / "a" / part, root / "b" / part)) differing.push_back(part);
  }
  fs::remove_all(root);
  Verdict v;
  v.pass = differing.empty();
  std::string list;
  for (const auto& d : differing) list += " " + d;
  v.detail = differing.empty() ? "dataset, checkpoint, noise and defense files byte-identical across two runs"
                               : "differing artifacts:" + list;
  return v;
}

double mean_of(const std::vector<SeedRun>& runs, const std::function<double(const SeedRun&)>& f) {
  double s = 0.0;
  for (const auto& r : runs) s += f(r);
  return s / static_cast<double>(runs.size());
}

}  // namespace

int main() {
  const auto start = Clock::now();
  report_line(1, "gradient check", gradients());

  // The budget line is printed once every attack and baseline has run.
  const Verdict labels = label_oracle();
  const Verdict metrics = metrics_oracle();

  std::printf("training victims, attacks and defenses on seeds 1-3\n");
  const SyntheticData data = generate_synthetic(SyntheticConfig{});
  std::vector<SeedRun> runs;
  for (std::uint64_t seed : kSeeds) runs.push_back(run_seed(data, seed));

  float worst_baseline = 0.0F;
  Verdict base{true, ""};
  for (const auto& r : runs) {
    const Verdict b = baselines(r, data, &worst_baseline);
    if (!b.pass || base.detail.empty()) base = b;
  }
  float worst_epoch = 0.0F;
  for (const auto& r : runs) worst_epoch = std::max(worst_epoch, r.worst_epoch_budget);
  const float limit = budget_limit(kDefaultEpsilon);
  report_line(2, "linf budget",
              {worst_epoch <= limit && worst_baseline <= limit,
               fmt("max |eta| per epoch %.9g, max baseline |adv - x| %.9g, eps %.9g", static_cast<double>(worst_epoch),
                   static_cast<double>(worst_baseline), static_cast<double>(kDefaultEpsilon))});
  report_line(3, "label perturbation oracle", labels);
  report_line(4, "metrics oracle", metrics);

  {
    Verdict v;
    std::ostringstream d;
    for (const auto& r : runs) {
      const bool ok = r.clean_f1 >= 0.90 && r.attacked_f1 <= 0.60 && r.clean_ma - r.attacked_ma >= 0.15 &&
                      r.pipeline_seconds <= 600.0;
      v.pass = v.pass && ok;
      d << fmt("[seed %llu F1 %.3f->%.3f mA drop %.3f %.0fs] ", static_cast<unsigned long long>(r.seed), r.clean_f1,
               r.attacked_f1, r.clean_ma - r.attacked_ma, r.pipeline_seconds);
    }
    v.detail = d.str();
    report_line(5, "attack efficacy", v);
  }
  {
    const double global_drop = mean_of(runs, [](const SeedRun& r) { return r.clean_f1 - r.attacked_f1; });
    const double patch_drop = mean_of(runs, [](const SeedRun& r) { return r.clean_f1 - r.patch_f1; });
    const double free_drop = mean_of(runs, [](const SeedRun& r) { return r.clean_f1 - r.unconstrained_f1; });
    report_line(6, "ablation ordering",
                {global_drop >= patch_drop && free_drop >= global_drop,
                 fmt("mean F1 drop: global %.4f, patch %.4f, unconstrained %.4f", global_drop, patch_drop, free_drop)});
  }
  {
    std::size_t outside = 0;
    for (const auto& r : runs) outside += r.patch_outside_nonzero;
    report_line(7, "patch support",
                {outside == 0, fmt("%zu nonzero entries outside the window over %zu test images x 3 patches", outside,
                                   data.test.size())});
  }
  {
    Verdict v;
    std::ostringstream d;
    for (const auto& r : runs) {
      const double drop = r.clean_f1 - r.attacked_f1;
      const double recovered = drop > 0.0 ? (r.defended_f1 - r.attacked_f1) / drop : 0.0;
      const double shift = std::fabs(r.defended_clean_f1 - r.clean_f1);
      v.pass = v.pass && drop > 0.0 && recovered >= 0.60 && shift <= 0.05;
      d << fmt("[seed %llu recovered %.1f%% clean shift %.4f] ", static_cast<unsigned long long>(r.seed),
               100.0 * recovered, shift);
    }
    v.detail = d.str();
    report_line(8, "defense recovery", v);
  }
  {
    const double full = mean_of(runs, [](const SeedRun& r) { return r.defended_f1 - r.attacked_f1; });
    const double filter = mean_of(runs, [](const SeedRun& r) { return r.filter_only_f1 - r.attacked_f1; });
    report_line(9, "defense components",
                {filter < full, fmt("mean F1 recovered: filter only %.4f, filter + prompt %.4f", filter, full)});
  }
  report_line(10, "determinism", determinism());
  report_line(11, "baseline reductions", base);
  {
    Verdict v;
    std::ostringstream d;
    for (const auto& r : runs) {
      const double drop_a = r.clean_f1 - r.attacked_f1, drop_b = r.b_clean_f1 - r.b_attacked_f1;
      v.pass = v.pass && drop_b < drop_a;
      d << fmt("[seed %llu drop A %.4f B %.4f] ", static_cast<unsigned long long>(r.seed), drop_a, drop_b);
    }
    v.detail = d.str();
    report_line(12, "cross-model transfer", v);
  }

  std::printf("%d of 12 criteria failed, %.0f s total\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
