#include <doctest.h>

#include <set>

#include "nmsearch/errors.hpp"
#include "nmsearch/search_space.hpp"

using namespace nmsearch;

namespace {

const std::vector<SparsityLevel> kLevels{SparsityLevel::make(4, 4), SparsityLevel::make(1, 4),
                                         SparsityLevel::make(2, 4)};

ArchSpec linear_stack(std::size_t blocks) {
  ArchSpec a;
  a.kind = ArchKind::linear_stack;
  a.blocks = blocks;
  return a;
}

}  // namespace

TEST_CASE("search space construction") {
  const auto space = SearchSpace::make(ArchSpec{}, kLevels, 0.5);
  CHECK(space.levels == std::vector<SparsityLevel>{SparsityLevel::make(1, 4), SparsityLevel::make(2, 4),
                                                   SparsityLevel::make(4, 4)});
  CHECK(space.sparsest() == SparsityLevel::make(1, 4));
  CHECK(space.densest() == SparsityLevel::make(4, 4));
  CHECK(space.c_upper == 0.5 * static_cast<double>(dense_flops(ArchSpec{})));
  CHECK(space.c_lower() == static_cast<double>(config_flops(space.arch, uniform_level_config(space, space.sparsest()))));
  CHECK(space.level_index(SparsityLevel::make(2, 4)) == 1);
  CHECK_FALSE(space.level_index(SparsityLevel::make(3, 4)).has_value());

  CHECK_THROWS_AS(SearchSpace::make(ArchSpec{}, {SparsityLevel::make(1, 4), SparsityLevel::make(2, 4)}, 0.5),
                  ConfigError);
  CHECK_THROWS_AS(SearchSpace::make(ArchSpec{}, {}, 0.5), ConfigError);
  CHECK_THROWS_AS(SearchSpace::make(ArchSpec{}, kLevels, 0.0), ConfigError);
  ArchSpec odd;
  odd.embed_dim = 36;
  odd.num_heads = 2;
  CHECK_THROWS_AS(SearchSpace::make(odd, {SparsityLevel::make(1, 8), SparsityLevel::make(8, 8)}, 0.5),
                  ConfigError);
}

TEST_CASE("validate") {
  const auto space = SearchSpace::make(ArchSpec{}, kLevels, 0.5);
  const auto dense = validate(space, uniform_level_config(space, SparsityLevel::make(4, 4)));
  REQUIRE(dense.has_value());
  CHECK(dense->kind == Violation::Kind::cost);
  CHECK_FALSE(validate(space, uniform_level_config(space, space.sparsest())).has_value());

  auto c = uniform_level_config(space, space.sparsest());
  c.levels[3] = SparsityLevel::make(3, 4);
  const auto membership = validate(space, c);
  REQUIRE(membership.has_value());
  CHECK(membership->kind == Violation::Kind::membership);
  CHECK(membership->layer == 3);

  c.levels.pop_back();
  const auto length = validate(space, c);
  REQUIRE(length.has_value());
  CHECK(length->kind == Violation::Kind::length);

  CHECK_THROWS_AS(uniform_level_config(space, SparsityLevel::make(3, 4)), ConfigError);
}

TEST_CASE("uniform level configs") {
  const auto space = SearchSpace::make(ArchSpec{}, kLevels, 1.0);
  for (const auto& level : space.levels) {
    const auto c = uniform_level_config(space, level);
    CHECK(c.size() == space.num_layers());
    for (const auto& l : c.levels) CHECK(l == level);
  }
}

TEST_CASE("enumerate") {
  SUBCASE("no cost cap") {
    const auto space = SearchSpace::make(linear_stack(1), kLevels, 1.0);
    const auto all = enumerate(space, 1000);
    CHECK(all.size() == 81);
    CHECK(std::set<SparseConfig>(all.begin(), all.end()).size() == 81);
    CHECK(std::is_sorted(all.begin(), all.end(), [&](const SparseConfig& a, const SparseConfig& b) {
      for (std::size_t l = 0; l < a.size(); ++l) {
        if (a.levels[l] != b.levels[l]) return *space.level_index(a.levels[l]) < *space.level_index(b.levels[l]);
      }
      return false;
    }));
  }
  SUBCASE("single layer") {
    ArchSpec one = linear_stack(1);
    const auto space = SearchSpace::make(one, kLevels, 1.0);
    CHECK(enumerate(space, 81).size() == 81);
  }
  SUBCASE("cost cap matches an independent count") {
    // Module weights in units of 2*T*D^2: qkv 3, proj 1, fc1 2, fc2 2.
    const auto space = SearchSpace::make(linear_stack(1), kLevels, 0.5);
    const double w[4] = {3, 1, 2, 2};
    const double d[3] = {0.25, 0.5, 1.0};
    std::size_t expected = 0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
          for (int e = 0; e < 3; ++e)
            if (w[0] * d[a] + w[1] * d[b] + w[2] * d[c] + w[3] * d[e] <= 4.0) ++expected;
    CHECK(expected == 29);
    const auto capped = enumerate(space, 1000);
    CHECK(capped.size() == expected);
    for (const auto& c : capped) CHECK_FALSE(validate(space, c).has_value());
  }
  SUBCASE("refuses large spaces") {
    const auto space = SearchSpace::make(linear_stack(2), kLevels, 1.0);
    CHECK_THROWS_AS(enumerate(space, 1000), ConfigError);
  }
}

TEST_CASE("config JSON form") {
  const SparseConfig c{{SparsityLevel::make(2, 4), SparsityLevel::make(1, 4)}};
  CHECK(c.to_json() == R"(["2:4","1:4"])");
  CHECK(SparseConfig::from_json(c.to_json()) == c);
  CHECK_THROWS_AS(SparseConfig::from_json("[1,2]"), InvalidInputError);
  CHECK_THROWS_AS(SparseConfig::from_json("{"), InvalidInputError);
}
