#include "aslpar/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace aslpar {
namespace {

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

void check_inputs(const Tensor& scores, const Tensor& targets) {
  if (scores.rank() != 2) throw DimensionError("metrics: scores must be [M x N], got " + scores.shape().str());
  require_same_shape(scores, targets, "metrics");
  for (float t : targets.data()) {
    if (t != 0.0F && t != 1.0F) throw std::invalid_argument("metrics: targets must be binary");
  }
}

}  // namespace

AttributeCounts ConfusionCounts::total() const {
  AttributeCounts sum;
  for (const auto& c : per_attribute) {
    sum.tp += c.tp;
    sum.tn += c.tn;
    sum.fp += c.fp;
    sum.fn += c.fn;
  }
  return sum;
}

ConfusionCounts confusion(const Tensor& scores, const Tensor& targets, float threshold) {
  check_inputs(scores, targets);
  const std::size_t m = scores.dim(0), n = scores.dim(1);
  ConfusionCounts out{std::vector<AttributeCounts>(n)};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool pred = scores[i * n + j] > threshold;
      const bool truth = targets[i * n + j] == 1.0F;
      auto& c = out.per_attribute[j];
      if (pred && truth) ++c.tp;
      else if (pred) ++c.fp;
      else if (truth) ++c.fn;
      else ++c.tn;
    }
  }
  return out;
}

ApResult average_precision(std::span<const float> scores, std::span<const float> targets) {
  if (scores.size() != targets.size()) throw DimensionError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double area = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (targets[order[rank]] == 1.0F) {
      ++hits;
      area += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return {0.0, false};
  return {area / static_cast<double>(hits), true};
}

MetricsReport report(const Tensor& scores, const Tensor& targets, const ReportOptions& options) {
  check_inputs(scores, targets);
  const std::size_t m = scores.dim(0), n = scores.dim(1);
  if (m == 0) throw std::invalid_argument("metrics: no samples");

  MetricsReport r;
  r.counts = confusion(scores, targets, options.threshold);
  std::vector<float> col_s(m), col_t(m);
  double ap_sum = 0.0;
  std::size_t ap_count = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      col_s[i] = scores[i * n + j];
      col_t[i] = targets[i * n + j];
    }
    r.ap.push_back(average_precision(col_s, col_t));
    if (r.ap.back().defined) {
      ap_sum += r.ap.back().value;
      ++ap_count;
    }
  }
  r.mean_ap = safe_ratio(ap_sum, static_cast<double>(ap_count));

  const AttributeCounts t = r.counts.total();
  const double tp = static_cast<double>(t.tp), tn = static_cast<double>(t.tn);
  const double fp = static_cast<double>(t.fp), fn = static_cast<double>(t.fn);
  r.accuracy = safe_ratio(tp + tn, tp + tn + fp + fn);
  r.precision = safe_ratio(tp, tp + fp);
  r.recall = safe_ratio(tp, tp + fn);
  r.f1 = harmonic(r.precision, r.recall);

  if (options.instance_metrics) {
    InstanceMetrics im;
    for (const auto& c : r.counts.per_attribute) {
      const double tpr = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
      const double tnr = safe_ratio(static_cast<double>(c.tn), static_cast<double>(c.tn + c.fp));
      im.label_mean_accuracy += (tpr + tnr) / 2.0;
    }
    im.label_mean_accuracy /= static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t inter = 0, uni = 0, pred = 0, truth = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const bool p = scores[i * n + j] > options.threshold;
        const bool g = targets[i * n + j] == 1.0F;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
        pred += p ? 1 : 0;
        truth += g ? 1 : 0;
      }
      im.accuracy += safe_ratio(static_cast<double>(inter), static_cast<double>(uni));
      im.precision += safe_ratio(static_cast<double>(inter), static_cast<double>(pred));
      im.recall += safe_ratio(static_cast<double>(inter), static_cast<double>(truth));
    }
    const double md = static_cast<double>(m);
    im.accuracy /= md;
    im.precision /= md;
    im.recall /= md;
    im.f1 = harmonic(im.precision, im.recall);
    r.instance = im;
  }
  return r;
}

std::string report_csv(const MetricsReport& r, const std::vector<std::string>& attribute_names) {
  if (attribute_names.size() != r.ap.size()) {
    throw std::invalid_argument("report_csv: " + std::to_string(attribute_names.size()) + " names for " +
                                std::to_string(r.ap.size()) + " attributes");
  }
  std::string out = "metric,value\n";
  auto row = [&](const std::string& name, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out += name + "," + buf + "\n";
  };
  row("mA", r.mean_ap);
  row("accuracy", r.accuracy);
  row("precision", r.precision);
  row("recall", r.recall);
  row("f1", r.f1);
  if (r.instance) {
    row("label_mA", r.instance->label_mean_accuracy);
    row("instance_accuracy", r.instance->accuracy);
    row("instance_precision", r.instance->precision);
    row("instance_recall", r.instance->recall);
    row("instance_f1", r.instance->f1);
  }
  for (std::size_t j = 0; j < r.ap.size(); ++j) row("ap_" + attribute_names[j], r.ap[j].value);
  return out;
}

}  // namespace aslpar
