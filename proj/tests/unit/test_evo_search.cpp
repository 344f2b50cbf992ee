#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "nmsearch/errors.hpp"
#include "nmsearch/evo_search.hpp"

using namespace nmsearch;

namespace {

SearchSpace tiny_space(double c_upper = 0.8) {
  ArchSpec a;
  a.kind = ArchKind::linear_stack;
  a.blocks = 1;
  return SearchSpace::make(a, {SparsityLevel::make(1, 4), SparsityLevel::make(2, 4), SparsityLevel::make(4, 4)},
                           c_upper);
}

// Candidates outside any real space. `id` picks a distinct config through
// its base-4 digits; equal ids mean the same subnet.
Candidate cand(Flops flops, double acc, std::uint32_t id) {
  Candidate c;
  c.flops = flops;
  c.accuracy = acc;
  for (int d = 0; d < 4; ++d, id /= 4) c.config.levels.push_back(SparsityLevel::make(1 + id % 4, 4));
  return c;
}

// Deterministic accuracy surrogate that rewards density with a per-layer
// weight, so the frontier has several points.
double surrogate(const SparseConfig& c) {
  double s = 0.0;
  for (std::size_t l = 0; l < c.size(); ++l) s += (1.0 + 0.37 * static_cast<double>(l)) * c[l].density();
  return s / 10.0;
}

bool dominates(const Candidate& a, const Candidate& b) {
  return a.flops <= b.flops && a.accuracy >= b.accuracy && (a.flops < b.flops || a.accuracy > b.accuracy);
}

}  // namespace

TEST_CASE("pareto front examples") {
  const auto front = pareto_front({cand(10, 0.5, 0), cand(20, 0.7, 1), cand(15, 0.4, 2), cand(30, 0.7, 3), cand(5, 0.1, 4)});
  REQUIRE(front.size() == 3);
  CHECK(front[0].flops == 5);
  CHECK(front[1].flops == 10);
  CHECK(front[2].flops == 20);
  CHECK(pareto_front({}).empty());

  // Equal points are both kept, once per distinct config.
  const auto ties = pareto_front({cand(10, 0.5, 1), cand(10, 0.5, 2), cand(10, 0.5, 1)});
  CHECK(ties.size() == 2);
}

TEST_CASE("pareto front properties") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<Candidate> pool;
    const std::size_t n = 1 + uniform_index(rng, 40);
    for (std::size_t i = 0; i < n; ++i) {
      pool.push_back(cand(uniform_index(rng, 20), static_cast<double>(uniform_index(rng, 10)) / 10,
                          static_cast<std::uint32_t>(i)));
    }
    const auto front = pareto_front(pool);
    REQUIRE_FALSE(front.empty());
    for (const auto& a : front) {
      for (const auto& b : front) REQUIRE_FALSE(dominates(a, b));
    }
    for (const auto& c : pool) {
      bool kept = false;
      for (const auto& f : front) kept = kept || (f.flops == c.flops && f.accuracy == c.accuracy);
      if (!kept) {
        bool dominated = false;
        for (const auto& f : front) dominated = dominated || dominates(f, c);
        REQUIRE(dominated);
      }
    }
    for (std::size_t i = 1; i < front.size(); ++i) {
      REQUIRE(front[i - 1].flops <= front[i].flops);
      if (front[i - 1].flops < front[i].flops) REQUIRE(front[i - 1].accuracy < front[i].accuracy);
    }
    REQUIRE(pareto_front(front).size() == front.size());
  }
}

TEST_CASE("fitness and ordering") {
  const auto a = cand(100, 0.8, 0);
  CHECK(fitness(a, std::nullopt) == 0.8);
  CHECK(fitness(a, 100.0) == 0.8);
  CHECK(fitness(a, 99.0) == -std::numeric_limits<double>::infinity());
  CHECK(fitter(cand(100, 0.9, 1), a, std::nullopt));
  CHECK(fitter(cand(50, 0.8, 1), a, std::nullopt));
  CHECK(fitter(cand(50, 0.1, 1), a, 60.0));
  CHECK_FALSE(fitter(a, a, std::nullopt));
}

TEST_CASE("mutation and crossover") {
  const auto space = tiny_space();
  Rng rng(2);
  const auto base = uniform_level_config(space, SparsityLevel::make(1, 4));
  CHECK(mutate(base, space, 0.0, rng) == base);
  for (int t = 0; t < 200; ++t) {
    const auto m = mutate(base, space, 1.0, rng);
    REQUIRE_FALSE(validate(space, m).has_value());
    for (std::size_t l = 0; l < m.size(); ++l) REQUIRE(m[l] != base[l]);
  }

  ChoiceProbabilityTable t = ChoiceProbabilityTable::uniform(space);
  t.p[0] = {0.5, 0.5, 0.0};
  for (int i = 0; i < 200; ++i) {
    const auto m = mutate(base, space, 1.0, rng, &t);
    REQUIRE(m[0] == SparsityLevel::make(2, 4));
  }

  // Every mutation of the densest config breaks a tight cap; the input comes back.
  const auto tight = tiny_space(0.3);
  const auto cheap = uniform_level_config(tight, SparsityLevel::make(1, 4));
  CHECK(mutate(cheap, tight, 1.0, rng, nullptr, 5) == cheap);

  const auto a = uniform_level_config(space, SparsityLevel::make(1, 4));
  const auto b = uniform_level_config(space, SparsityLevel::make(4, 4));
  for (const auto kind : {CrossoverKind::uniform, CrossoverKind::one_point}) {
    for (int i = 0; i < 100; ++i) {
      const auto c = crossover(a, b, rng, kind);
      for (std::size_t l = 0; l < c.size(); ++l) REQUIRE((c[l] == a[l] || c[l] == b[l]));
      if (kind == CrossoverKind::one_point) {
        REQUIRE(c[0] == a[0]);
        REQUIRE(c[c.size() - 1] == b[b.size() - 1]);
      }
    }
  }
  auto shorter = b;
  shorter.levels.pop_back();
  CHECK_THROWS_AS(crossover(a, shorter, rng), ShapeError);
  CHECK(parse_crossover_kind("one_point") == CrossoverKind::one_point);
  CHECK_THROWS_AS(parse_crossover_kind("two_point"), ConfigError);
}

TEST_CASE("evolutionary search") {
  const auto space = tiny_space();
  const auto intervals = build_intervals(space, 5);
  EvoConfig cfg;
  cfg.population_size = 12;
  cfg.top_k = 12;
  cfg.crossover_pairs = 6;
  cfg.generations = 15;
  cfg.mutation_prob = 0.5;
  cfg.seed = 3;
  const Evaluator eval = surrogate;

  const auto r = evolutionary_search(space, intervals, ChoiceProbabilityTable::uniform(space), cfg, eval);
  CHECK(r.generations.size() == cfg.generations + 1);
  CHECK(r.population.size() == cfg.top_k);
  for (const auto& c : r.archive) {
    REQUIRE_FALSE(validate(space, c.config).has_value());
    REQUIRE(c.flops == config_flops(space.arch, c.config));
    REQUIRE(c.accuracy == surrogate(c.config));
  }
  std::set<SparseConfig> archived;
  for (const auto& c : r.archive) archived.insert(c.config);
  CHECK(archived.size() == r.archive.size());
  for (const auto& p : r.pareto) CHECK(archived.count(p.config) == 1);
  CHECK(r.pareto.size() == pareto_front(r.archive).size());
  for (std::size_t g = 1; g < r.generations.size(); ++g) {
    CHECK(r.generations[g].best_accuracy >= r.generations[g - 1].best_accuracy);
    CHECK(r.generations[g].archive_size >= r.generations[g - 1].archive_size);
  }

  SUBCASE("the tiny space frontier is recovered exactly") {
    const auto oracle = brute_force_pareto(space, eval);
    REQUIRE(oracle.size() == r.pareto.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(oracle[i].config == r.pareto[i].config);
      CHECK(oracle[i].flops == r.pareto[i].flops);
    }
  }

  SUBCASE("same seed, same result, any thread count") {
    const auto again = evolutionary_search(space, intervals, ChoiceProbabilityTable::uniform(space), cfg, eval, 3);
    CHECK(again.generations_csv() == r.generations_csv());
    CHECK(pareto_json(space, again.pareto, "x") == pareto_json(space, r.pareto, "x"));
  }

  SUBCASE("budget excludes over-cap candidates from the best fitness") {
    auto budgeted = cfg;
    budgeted.flops_budget = 0.5 * static_cast<double>(space.dense());
    const auto b = evolutionary_search(space, intervals, ChoiceProbabilityTable::uniform(space), budgeted, eval);
    double best = -1.0;
    for (const auto& c : b.archive) {
      if (static_cast<double>(c.flops) <= *budgeted.flops_budget) best = std::max(best, c.accuracy);
    }
    CHECK(b.generations.back().best_accuracy == best);
    REQUIRE_FALSE(b.population.empty());
    CHECK(static_cast<double>(b.population.front().flops) <= *budgeted.flops_budget);
    CHECK(b.population.front().accuracy == best);
  }

  SUBCASE("config validation") {
    auto bad = cfg;
    bad.top_k = 13;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.mutation_prob = 2.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("pareto json") {
  const auto space = tiny_space();
  const auto c = Candidate::make(space, uniform_level_config(space, space.densest()), 0.75);
  const auto j = nlohmann::json::parse(pareto_json(space, {c}, "abc"));
  CHECK(j["config_hash"] == "abc");
  REQUIRE(j["frontier"].size() == 1);
  CHECK(j["frontier"][0]["flops"] == space.dense());
  CHECK(j["frontier"][0]["flops_ratio_vs_dense"] == 1.0);
  CHECK(j["frontier"][0]["config"][0] == "4:4");
}
