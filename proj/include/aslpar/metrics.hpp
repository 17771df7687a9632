#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aslpar/tensor.hpp"

namespace aslpar {

struct AttributeCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Per-attribute confusion counts; tp + tn + fp + fn == M for every entry.
struct ConfusionCounts {
  std::vector<AttributeCounts> per_attribute;

  AttributeCounts total() const;
};

struct ApResult {
  double value = 0.0;
  /// False when the attribute has no positive sample; value is then 0 and
  /// the attribute is left out of mA.
  bool defined = true;
};

/// PAR-conventional variants, reported only on request.
struct InstanceMetrics {
  double label_mean_accuracy = 0.0;  // mean over attributes of (TPR + TNR) / 2
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  double mean_ap = 0.0;  // mA
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<ApResult> ap;
  ConfusionCounts counts;
  std::optional<InstanceMetrics> instance;
};

struct ReportOptions {
  float threshold = 0.5F;
  bool instance_metrics = false;
};

/// Predicted positive iff score > threshold.
ConfusionCounts confusion(const Tensor& scores, const Tensor& targets, float threshold = 0.5F);

/// Step-function area under the precision-recall curve. Ranks by descending
/// score; ties go to the lower sample index first.
ApResult average_precision(std::span<const float> scores, std::span<const float> targets);

/// scores, targets: [M x N]. Accuracy/precision/recall/F1 are computed from
/// counts summed over all attributes and samples.
MetricsReport report(const Tensor& scores, const Tensor& targets, const ReportOptions& options = {});

/// `metric,value` CSV with six decimals, followed by one ap_<name> row per attribute.
std::string report_csv(const MetricsReport& r, const std::vector<std::string>& attribute_names);

}  // namespace aslpar
