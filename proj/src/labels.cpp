#include "aslpar/labels.hpp"

#include <algorithm>
#include <stdexcept>

#include "aslpar/rng.hpp"
#include "aslpar/tensor_io.hpp"

namespace aslpar {

AttributeSchema::AttributeSchema(std::vector<std::string> names, std::vector<AttributeGroup> groups)
    : names_(std::move(names)), groups_(std::move(groups)) {
  if (names_.empty()) throw std::invalid_argument("schema: no attributes");
  if (groups_.empty()) throw std::invalid_argument("schema: no groups");
  std::size_t next = 0;
  for (const auto& g : groups_) {
    if (g.begin != next) {
      throw std::invalid_argument("schema: group '" + g.name + "' starts at " + std::to_string(g.begin) +
                                  ", expected " + std::to_string(next) + " (groups must be contiguous and disjoint)");
    }
    if (g.end <= g.begin) throw std::invalid_argument("schema: group '" + g.name + "' is empty");
    next = g.end;
  }
  if (next != names_.size()) {
    throw std::invalid_argument("schema: groups cover " + std::to_string(next) + " of " +
                                std::to_string(names_.size()) + " attributes");
  }
}

AttributeSchema AttributeSchema::from_group_sizes(const std::vector<std::size_t>& sizes) {
  static const char* kGroupNames[] = {"gender", "head", "upper", "lower", "foot", "hand"};
  std::vector<std::string> names;
  std::vector<AttributeGroup> groups;
  std::size_t at = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const std::string gname = g < 6 ? kGroupNames[g] : "group" + std::to_string(g);
    for (std::size_t k = 0; k < sizes[g]; ++k) names.push_back(gname + "_" + std::to_string(k));
    groups.push_back({gname, at, at + sizes[g]});
    at += sizes[g];
  }
  return AttributeSchema(std::move(names), std::move(groups));
}

AttributeSchema AttributeSchema::pedestrian_default() {
  return AttributeSchema(
      {"wide-body", "red-hat", "blue-hat", "no-hat", "red-torso", "green-torso", "blue-torso", "dark-legs",
       "light-legs", "patterned-legs", "dark-shoes", "light-shoes"},
      {{"gender", 0, 1}, {"head", 1, 4}, {"upper", 4, 7}, {"lower", 7, 10}, {"foot", 10, 12}});
}

std::size_t AttributeSchema::group_of(std::size_t attribute) const {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (attribute >= groups_[g].begin && attribute < groups_[g].end) return g;
  }
  throw std::out_of_range("schema: attribute index " + std::to_string(attribute) + " out of range");
}

nlohmann::json AttributeSchema::to_json() const {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : groups_) groups.push_back({{"name", g.name}, {"begin", g.begin}, {"end", g.end}});
  return {{"attributes", names_}, {"groups", groups}};
}

AttributeSchema AttributeSchema::from_json(const nlohmann::json& j) {
  std::vector<AttributeGroup> groups;
  for (const auto& g : j.at("groups")) {
    groups.push_back({g.at("name").get<std::string>(), g.at("begin").get<std::size_t>(), g.at("end").get<std::size_t>()});
  }
  return AttributeSchema(j.at("attributes").get<std::vector<std::string>>(), std::move(groups));
}

AttributeSchema AttributeSchema::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void AttributeSchema::save(const std::filesystem::path& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

void validate_labels(const LabelVector& y, const AttributeSchema& schema) {
  if (y.size() != schema.size()) {
    throw std::invalid_argument("labels: length " + std::to_string(y.size()) + " does not match schema size " +
                                std::to_string(schema.size()));
  }
  for (std::uint8_t b : y) {
    if (b > 1) throw std::invalid_argument("labels: entries must be 0 or 1");
  }
}

std::vector<GroupStats> group_stats(const LabelVector& y, const AttributeSchema& schema) {
  validate_labels(y, schema);
  std::vector<GroupStats> out;
  for (const auto& g : schema.groups()) {
    GroupStats s;
    for (std::size_t i = g.begin; i < g.end; ++i) (y[i] ? s.positives : s.zeros)++;
    out.push_back(s);
  }
  return out;
}

PerturbedLabels perturb_labels(const LabelVector& y, const AttributeSchema& schema, std::uint64_t seed) {
  validate_labels(y, schema);
  PerturbedLabels out{y, {}};
  for (std::size_t gi = 0; gi < schema.groups().size(); ++gi) {
    const AttributeGroup& g = schema.groups()[gi];
    GroupShift shift{gi, {}, {}};
    if (g.size() == 1) {
      out.bits[g.begin] = y[g.begin] ? 0 : 1;
      (y[g.begin] ? shift.cleared : shift.set).push_back(g.begin);
      out.provenance.push_back(std::move(shift));
      continue;
    }
    std::vector<std::size_t> pos, zero;
    for (std::size_t i = g.begin; i < g.end; ++i) (y[i] ? pos : zero).push_back(i);
    if (!pos.empty() && !zero.empty()) {
      Rng rng = make_rng(derive_seed(seed, gi));
      std::size_t moves = pos.size();
      if (pos.size() > zero.size()) {
        // Surplus positives: a random subset of |Z| moves, the rest stays.
        std::shuffle(pos.begin(), pos.end(), rng);
        moves = zero.size();
        pos.resize(moves);
      } else {
        std::shuffle(zero.begin(), zero.end(), rng);
        zero.resize(moves);
      }
      for (std::size_t k = 0; k < moves; ++k) {
        out.bits[pos[k]] = 0;
        out.bits[zero[k]] = 1;
      }
      std::sort(pos.begin(), pos.end());
      std::sort(zero.begin(), zero.end());
      shift.cleared = std::move(pos);
      shift.set = std::move(zero);
    }
    out.provenance.push_back(std::move(shift));
  }
  return out;
}

}  // namespace aslpar
