#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace aslpar {

/// Contiguous half-open index range [begin, end) of one body-part group.
struct AttributeGroup {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const AttributeGroup&) const = default;
};

/// Ordered attribute list partitioned into contiguous body-part groups
/// (gender first, then head, upper body, lower body, foot, hand, ...).
class AttributeSchema {
 public:
  AttributeSchema() = default;
  /// Throws std::invalid_argument unless the groups are non-empty, ordered,
  /// contiguous and cover exactly 0..N-1.
  AttributeSchema(std::vector<std::string> names, std::vector<AttributeGroup> groups);

  /// Schema with generated attribute names and the conventional group names.
  static AttributeSchema from_group_sizes(const std::vector<std::size_t>& sizes);
  /// gender(1) head(3) upper(3) lower(3) foot(2): the synthetic data schema.
  static AttributeSchema pedestrian_default();

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<AttributeGroup>& groups() const { return groups_; }
  std::size_t group_of(std::size_t attribute) const;

  nlohmann::json to_json() const;
  static AttributeSchema from_json(const nlohmann::json& j);
  static AttributeSchema load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const AttributeSchema&, const AttributeSchema&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<AttributeGroup> groups_;
};

/// Binary attribute labels, one entry per schema attribute.
using LabelVector = std::vector<std::uint8_t>;

/// Indices moved within one group.
struct GroupShift {
  std::size_t group = 0;
  std::vector<std::size_t> cleared;  // 1 -> 0
  std::vector<std::size_t> set;      // 0 -> 1
};

struct PerturbedLabels {
  LabelVector bits;
  std::vector<GroupShift> provenance;
};

struct GroupStats {
  std::size_t positives = 0;
  std::size_t zeros = 0;
};

void validate_labels(const LabelVector& y, const AttributeSchema& schema);

std::vector<GroupStats> group_stats(const LabelVector& y, const AttributeSchema& schema);

/// Part-wise label shift. Per group G with positives P and zeros Z:
///   |G| = 1          -> negate
///   |P| = 0          -> unchanged
///   0 < |P| <= |Z|   -> every positive moves to a distinct random zero
///   |P| > |Z| > 0    -> |Z| random positives move onto all zeros, rest stay
///   |Z| = 0          -> unchanged
/// Each group draws from its own stream derived from `seed`.
PerturbedLabels perturb_labels(const LabelVector& y, const AttributeSchema& schema, std::uint64_t seed);

}  // namespace aslpar
