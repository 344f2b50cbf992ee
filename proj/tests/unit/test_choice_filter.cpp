#include <doctest.h>

#include <atomic>

#include <nlohmann/json.hpp>

#include "nmsearch/choice_filter.hpp"
#include "nmsearch/errors.hpp"

using namespace nmsearch;

namespace {

SearchSpace tiny_space() {
  ArchSpec a;
  a.kind = ArchKind::linear_stack;
  a.blocks = 1;
  return SearchSpace::make(a, {SparsityLevel::make(1, 4), SparsityLevel::make(2, 4), SparsityLevel::make(4, 4)},
                           1.0);
}

ChoiceScoreTable scores_of(std::vector<std::vector<double>> mean, std::vector<std::vector<std::size_t>> count) {
  ChoiceScoreTable t;
  t.mean = std::move(mean);
  t.count = std::move(count);
  return t;
}

double row_sum(const std::vector<double>& row) {
  double s = 0.0;
  for (const double v : row) s += v;
  return s;
}

}  // namespace

TEST_CASE("running mean accumulation") {
  const auto space = tiny_space();
  auto t = ChoiceScoreTable::zeros(4, 3);
  const auto sparse = uniform_level_config(space, SparsityLevel::make(1, 4));
  auto mixed = sparse;
  mixed.levels[2] = SparsityLevel::make(4, 4);
  t = accumulate(t, space, sparse, 0.5);
  t = accumulate(t, space, mixed, 0.9);
  CHECK(t.count[0][0] == 2);
  CHECK(t.mean[0][0] == doctest::Approx(0.7));
  CHECK(t.count[2][0] == 1);
  CHECK(t.mean[2][0] == 0.5);
  CHECK(t.mean[2][2] == 0.9);
  CHECK(t.count[1][1] == 0);

  CHECK_THROWS_AS(accumulate(t, space, sparse, -0.1), InvalidInputError);
  auto short_config = sparse;
  short_config.levels.pop_back();
  CHECK_THROWS_AS(accumulate(t, space, short_config, 0.5), ShapeError);
}

TEST_CASE("filter thresholds and renormalizes") {
  ChoiceProbabilityTable prior;
  prior.p = {{0.2, 0.3, 0.5}};

  SUBCASE("hand example") {
    // Level 0 scored 0.05 (dropped), level 1 scored 0.6, level 2 never seen.
    const auto scores = scores_of({{0.05, 0.6, 0.0}}, {{3, 2, 0}});
    std::vector<std::vector<bool>> zeroed;
    const auto out = filter_table(prior, scores, 0.1, &zeroed);
    // Observed prior mass 0.5 goes entirely to level 1; level 2 keeps 0.5.
    CHECK(out.p[0][0] == 0.0);
    CHECK(out.p[0][1] == doctest::Approx(0.5));
    CHECK(out.p[0][2] == doctest::Approx(0.5));
    CHECK(zeroed[0] == std::vector<bool>{true, false, false});
  }

  SUBCASE("kept choices share mass by score") {
    const auto scores = scores_of({{0.2, 0.6, 0.2}}, {{1, 1, 1}});
    const auto out = filter_table(prior, scores, 0.1);
    CHECK(out.p[0][0] == doctest::Approx(0.2));
    CHECK(out.p[0][1] == doctest::Approx(0.6));
    CHECK(out.p[0][2] == doctest::Approx(0.2));
  }

  SUBCASE("no observations leaves the row unchanged") {
    const auto scores = scores_of({{0, 0, 0}}, {{0, 0, 0}});
    CHECK(filter_table(prior, scores, 0.5) == prior);
  }

  SUBCASE("a layer with nothing left is an error") {
    const auto scores = scores_of({{0.01, 0.02, 0.03}}, {{1, 1, 1}});
    CHECK_THROWS_AS(filter_table(prior, scores, 0.5), FilterError);
  }

  SUBCASE("zero threshold keeps every observed choice") {
    const auto scores = scores_of({{0.1, 0.4, 0.5}}, {{1, 1, 1}});
    std::vector<std::vector<bool>> zeroed;
    filter_table(prior, scores, 0.0, &zeroed);
    CHECK(zeroed[0] == std::vector<bool>{false, false, false});
  }
}

TEST_CASE("filter invariants on random tables") {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    ChoiceProbabilityTable prior;
    auto scores = ChoiceScoreTable::zeros(5, 4);
    prior.p.assign(5, std::vector<double>(4));
    for (std::size_t l = 0; l < 5; ++l) {
      double s = 0.0;
      for (auto& v : prior.p[l]) s += (v = uniform01(rng) < 0.2 ? 0.0 : uniform01(rng));
      if (s == 0.0) {
        prior.p[l][0] = s = 1.0;
      }
      for (auto& v : prior.p[l]) v /= s;
      for (std::size_t k = 0; k < 4; ++k) {
        if (prior.p[l][k] > 0 && uniform01(rng) < 0.7) {
          scores.count[l][k] = 1 + uniform_index(rng, 5);
          scores.mean[l][k] = uniform01(rng);
        }
      }
    }
    const double threshold = 0.3 * uniform01(rng);
    std::vector<std::vector<bool>> zeroed;
    ChoiceProbabilityTable out;
    try {
      out = filter_table(prior, scores, threshold, &zeroed);
    } catch (const FilterError&) {
      continue;
    }
    CHECK_NOTHROW(out.validate());
    for (std::size_t l = 0; l < 5; ++l) {
      CHECK(row_sum(out.p[l]) == doctest::Approx(1.0));
      for (std::size_t k = 0; k < 4; ++k) {
        if (prior.p[l][k] == 0.0) CHECK(out.p[l][k] == 0.0);
        if (zeroed[l][k]) {
          CHECK(out.p[l][k] == 0.0);
          CHECK(scores.mean[l][k] < threshold);
        }
      }
    }
    // Filtering twice with the same scores removes nothing new.
    std::vector<std::vector<bool>> again;
    filter_table(out, scores, threshold, &again);
    for (std::size_t l = 0; l < 5; ++l) {
      for (std::size_t k = 0; k < 4; ++k) {
        if (again[l][k]) CHECK(zeroed[l][k]);
      }
    }
  }
}

TEST_CASE("probability update with a stub evaluator") {
  const auto space = tiny_space();
  // Any subnet using 1:4 in layer 2 scores 0, everything else 0.9.
  const Evaluator eval = [&](const SparseConfig& c) { return c[2] == SparsityLevel::make(1, 4) ? 0.0 : 0.9; };
  const ConfigSampler sampler = [&](const ChoiceProbabilityTable& t, Rng& r) {
    return sample_from_table(space, t, r);
  };
  Rng rng(2);
  const auto report = update_probabilities(space, ChoiceProbabilityTable::uniform(space), FilterConfig{64, 0.1},
                                           eval, sampler, rng, 2);
  CHECK(report.evaluated.size() == 64);
  CHECK(report.table.p[2][0] == 0.0);
  CHECK(report.zeroed[2][0]);
  std::size_t zeroed = 0;
  for (const auto& row : report.zeroed) {
    for (const bool z : row) zeroed += z;
  }
  CHECK(zeroed == 1);
  CHECK_NOTHROW(report.table.validate());

  const auto j = nlohmann::json::parse(report.to_json(space));
  CHECK(j.size() == space.num_layers() * space.num_levels());
  CHECK(j[6]["layer"] == 2);
  CHECK(j[6]["level"] == "1:4");
  CHECK(j[6]["zeroed"] == true);

  SUBCASE("result does not depend on the thread count") {
    Rng a(3), b(3);
    const auto one = update_probabilities(space, ChoiceProbabilityTable::uniform(space), FilterConfig{32, 0.1},
                                          eval, sampler, a, 1);
    const auto four = update_probabilities(space, ChoiceProbabilityTable::uniform(space), FilterConfig{32, 0.1},
                                           eval, sampler, b, 4);
    CHECK(one.table == four.table);
    CHECK(one.evaluated == four.evaluated);
  }

  SUBCASE("invalid filter config") {
    CHECK_THROWS_AS((FilterConfig{0, 0.1}.validate()), ConfigError);
    CHECK_THROWS_AS((FilterConfig{4, 1.5}.validate()), ConfigError);
  }
}
