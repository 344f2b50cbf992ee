#pragma once

// Evolutionary search over sparse configurations with the supernet as the
// accuracy estimator. Populations are seeded by two-step sampling, evolved
// by per-layer mutation and crossover, and truncated to the top-k by
// fitness. Every evaluated candidate goes into an archive whose
// non-dominated subset (max accuracy, min FLOPs) is the result.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nmsearch/choice_filter.hpp"
#include "nmsearch/cost_model.hpp"
#include "nmsearch/rng.hpp"
#include "nmsearch/sampling.hpp"
#include "nmsearch/search_space.hpp"

namespace nmsearch {

struct Candidate {
  SparseConfig config;
  Flops flops = 0;
  double accuracy = 0.0;

  // Computes flops from the arch.
  static Candidate make(const SearchSpace& space, SparseConfig config, double accuracy);
};

enum class CrossoverKind { uniform, one_point };
CrossoverKind parse_crossover_kind(const std::string& text);

struct EvoConfig {
  std::size_t population_size = 50;
  std::size_t generations = 20;
  double mutation_prob = 0.1;
  std::size_t crossover_pairs = 25;
  std::size_t top_k = 50;
  std::optional<double> flops_budget;
  std::uint64_t seed = 0;
  CrossoverKind crossover = CrossoverKind::uniform;
  std::size_t max_retries = 50;      // mutation/crossover redraws on cost violation
  std::size_t sample_retries = 200;  // two-step rejection budget at init

  void validate() const;
};

std::vector<SparseConfig> init_population(const SearchSpace& space, const CostIntervals& intervals,
                                          const ChoiceProbabilityTable& table, const EvoConfig& config,
                                          Rng& rng);

// Each layer, with probability `mutation_prob`, moves to a different level
// drawn uniformly among levels with nonzero probability in `table` (all
// levels when `table` is null). Redrawn up to `max_retries` times while the
// result violates the space; returns the input when the budget runs out.
SparseConfig mutate(const SparseConfig& config, const SearchSpace& space, double mutation_prob,
                    Rng& rng, const ChoiceProbabilityTable* table = nullptr,
                    std::size_t max_retries = 50);

SparseConfig crossover(const SparseConfig& a, const SparseConfig& b, Rng& rng,
                       CrossoverKind kind = CrossoverKind::uniform);

// Accuracy, or -infinity when over budget.
double fitness(const Candidate& candidate, std::optional<double> budget);

// Strict total order: higher fitness, then lower FLOPs, then config order.
bool fitter(const Candidate& a, const Candidate& b, std::optional<double> budget);

// Non-dominated subset, sorted by FLOPs then config. A candidate is dropped
// when another has <= FLOPs and >= accuracy with at least one strict.
std::vector<Candidate> pareto_front(const std::vector<Candidate>& candidates);

struct GenerationStats {
  std::size_t generation = 0;
  double best_accuracy = 0.0;  // best in-budget fitness in the archive
  double mean_accuracy = 0.0;  // over the current population
  std::size_t archive_size = 0;
};

struct SearchResult {
  std::vector<Candidate> pareto;
  std::vector<Candidate> archive;  // sorted by config
  std::vector<Candidate> population;
  std::vector<GenerationStats> generations;

  std::string generations_csv() const;
};

SearchResult evolutionary_search(const SearchSpace& space, const CostIntervals& intervals,
                                 const ChoiceProbabilityTable& table, const EvoConfig& config,
                                 const Evaluator& evaluate, std::size_t threads = 1);

// Exhaustive oracle for small spaces.
std::vector<Candidate> brute_force_pareto(const SearchSpace& space, const Evaluator& evaluate,
                                          std::size_t max_count = 1u << 16, std::size_t threads = 1);

// {"config_hash":..., "frontier":[{config, flops, flops_ratio_vs_dense, accuracy}]}
std::string pareto_json(const SearchSpace& space, const std::vector<Candidate>& front,
                        const std::string& config_hash);

}  // namespace nmsearch
