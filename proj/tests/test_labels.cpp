#include <doctest.h>

#include <filesystem>
#include <random>

#include "aslpar/labels.hpp"
#include "aslpar/rng.hpp"
#include "oracles.hpp"

using namespace aslpar;

namespace {

LabelVector bits_of(unsigned code, std::size_t n) {
  LabelVector y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = (code >> i) & 1U;
  return y;
}

}  // namespace

TEST_CASE("schema construction") {
  const AttributeSchema s = AttributeSchema::from_group_sizes({1, 3, 3, 3, 2});
  CHECK(s.size() == 12);
  CHECK(s.groups().size() == 5);
  CHECK(s.group_of(0) == 0);
  CHECK(s.group_of(11) == 4);
  CHECK(AttributeSchema::pedestrian_default().size() == 12);
  CHECK_THROWS_AS(s.group_of(12), std::out_of_range);

  const std::vector<std::string> names = {"a", "b", "c"};
  CHECK_THROWS_AS(AttributeSchema(names, {{"g", 0, 1}, {"h", 2, 3}}), std::invalid_argument);
  CHECK_THROWS_AS(AttributeSchema(names, {{"g", 0, 2}, {"h", 1, 3}}), std::invalid_argument);
  CHECK_THROWS_AS(AttributeSchema(names, {{"g", 0, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(AttributeSchema(names, {{"g", 0, 0}, {"h", 0, 3}}), std::invalid_argument);
  CHECK_NOTHROW(AttributeSchema(names, {{"g", 0, 1}, {"h", 1, 3}}));
}

TEST_CASE("schema json round trip") {
  const AttributeSchema s = AttributeSchema::from_group_sizes({1, 2, 3});
  CHECK(AttributeSchema::from_json(s.to_json()) == s);
  const auto path = std::filesystem::temp_directory_path() / "aslpar_test_schema.json";
  s.save(path);
  CHECK(AttributeSchema::load(path) == s);
  std::filesystem::remove(path);
}

TEST_CASE("group_stats") {
  const AttributeSchema s = AttributeSchema::from_group_sizes({1, 3, 5});
  const auto st = group_stats({0, 1, 1, 1, 0, 0, 0, 1, 1}, s);
  REQUIRE(st.size() == 3);
  CHECK(st[0].positives == 0);
  CHECK(st[0].zeros == 1);
  CHECK(st[1].positives == 3);
  CHECK(st[1].zeros == 0);
  CHECK(st[2].positives == 2);
  CHECK(st[2].zeros == 3);
  CHECK_THROWS_AS(group_stats({0, 1}, s), std::invalid_argument);
  CHECK_THROWS_AS(group_stats({0, 1, 1, 1, 0, 0, 0, 1, 2}, s), std::invalid_argument);
}

TEST_CASE("perturbation of the six-part example") {
  const AttributeSchema s = AttributeSchema::from_group_sizes({1, 3, 5, 5, 3, 3});
  const LabelVector y = {0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0};
  // One admissible outcome of the rules.
  const LabelVector sample = {1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0};
  CHECK(oracle::label_rule_violations(y, sample, s).empty());

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const PerturbedLabels p = perturb_labels(y, s, seed);
    CHECK(oracle::label_rule_violations(y, p.bits, s).empty());
    CHECK(p.bits[0] == 1);
    CHECK(p.bits[2] == 0);
    CHECK(p.bits[7] == 0);
    CHECK(p.bits[8] == 0);
    CHECK(p.bits[12] == 1);
    CHECK(p.bits[13] == 1);
    CHECK(p.bits[15] == 0);
    for (std::size_t i = 17; i < 20; ++i) CHECK(p.bits[i] == 0);
    REQUIRE(p.provenance.size() == 6);
    CHECK(p.provenance[3].cleared.size() == 2);
    CHECK(p.provenance[3].set == std::vector<std::size_t>{12, 13});
    CHECK(p.provenance[5].cleared.empty());
  }
}

TEST_CASE("all-zero labels without singletons are unchanged") {
  const AttributeSchema s = AttributeSchema::from_group_sizes({2, 3, 4});
  const LabelVector y(9, 0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(perturb_labels(y, s, seed).bits == y);
}

TEST_CASE("exhaustive rule check") {
  for (const std::vector<std::size_t>& sizes : {std::vector<std::size_t>{1, 3}, {1, 2, 3, 3, 2, 1}}) {
    const AttributeSchema s = AttributeSchema::from_group_sizes(sizes);
    const std::size_t n = s.size();
    std::size_t violations = 0;
    for (unsigned code = 0; code < (1U << n); ++code) {
      const LabelVector y = bits_of(code, n);
      for (std::uint64_t seed = 0; seed < 100; ++seed) {
        violations += oracle::label_rule_violations(y, perturb_labels(y, s, seed).bits, s).size();
      }
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("shift properties on random inputs") {
  const AttributeSchema s = AttributeSchema::from_group_sizes({1, 3, 4, 4, 2, 3});
  Rng rng = make_rng(77);
  std::bernoulli_distribution coin(0.4);
  bool any_seed_difference = false;
  for (int trial = 0; trial < 10000; ++trial) {
    LabelVector y(s.size());
    for (auto& b : y) b = coin(rng) ? 1 : 0;
    const std::uint64_t seed = rng();
    const PerturbedLabels p = perturb_labels(y, s, seed);
    REQUIRE(oracle::label_rule_violations(y, p.bits, s).empty());
    CHECK(perturb_labels(y, s, seed).bits == p.bits);
    if (perturb_labels(y, s, seed + 1).bits != p.bits) any_seed_difference = true;
    // A newly set index shares its group with some cleared index.
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!(y[i] == 0 && p.bits[i] == 1) || s.groups()[s.group_of(i)].size() == 1) continue;
      bool paired = false;
      for (std::size_t k = 0; k < y.size(); ++k) {
        paired = paired || (y[k] == 1 && p.bits[k] == 0 && s.group_of(k) == s.group_of(i));
      }
      CHECK(paired);
    }
  }
  CHECK(any_seed_difference);
}

TEST_CASE("perturbation rejects bad label vectors") {
  const AttributeSchema s = AttributeSchema::from_group_sizes({1, 3});
  CHECK_THROWS_AS(perturb_labels({0, 1, 0}, s, 0), std::invalid_argument);
  CHECK_THROWS_AS(perturb_labels({0, 1, 0, 3}, s, 0), std::invalid_argument);
}
