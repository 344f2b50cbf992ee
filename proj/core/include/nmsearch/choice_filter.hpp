#pragma once

// Automatic choice filtering: evaluate sampled subnets on a proxy set, score
// each (layer, level) choice with the running mean accuracy of the subnets
// that used it, drop choices scoring below a threshold and renormalize.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "nmsearch/rng.hpp"
#include "nmsearch/sampling.hpp"
#include "nmsearch/search_space.hpp"

namespace nmsearch {

struct ChoiceScoreTable {
  std::vector<std::vector<double>> mean;         // [layer][level]
  std::vector<std::vector<std::size_t>> count;   // [layer][level]

  static ChoiceScoreTable zeros(std::size_t layers, std::size_t levels);
};

// Adds `score` to the running mean of (l, config[l]) for every layer l.
ChoiceScoreTable accumulate(ChoiceScoreTable table, const SearchSpace& space,
                            const SparseConfig& config, double score);

struct FilterConfig {
  std::size_t n_eval = 32;
  double acc_threshold = 0.1;

  void validate() const;
};

struct FilterReport {
  ChoiceScoreTable scores;
  std::vector<std::vector<bool>> zeroed;  // [layer][level]
  ChoiceProbabilityTable table;           // P_{t+1}
  std::vector<SparseConfig> evaluated;
  std::vector<double> accuracies;

  // [{layer, level, mean_score, count, zeroed, probability}, ...]
  std::string to_json(const SearchSpace& space) const;
};

// Thresholds observed scores and renormalizes. Observed choices below
// `acc_threshold` get probability 0; the remaining observed choices share
// the mass the layer previously gave to observed choices, in proportion to
// their mean score; unobserved choices keep their prior probability.
// Throws FilterError if a layer ends with no selectable level.
ChoiceProbabilityTable filter_table(const ChoiceProbabilityTable& table,
                                    const ChoiceScoreTable& scores, double acc_threshold,
                                    std::vector<std::vector<bool>>* zeroed = nullptr);

using Evaluator = std::function<double(const SparseConfig&)>;
using ConfigSampler = std::function<SparseConfig(const ChoiceProbabilityTable&, Rng&)>;

// Samples n_eval configurations with `sampler` (serially, from `rng`),
// evaluates them (possibly in parallel; `evaluate` must be thread-safe),
// accumulates scores in sample order and returns the filtered table.
FilterReport update_probabilities(const SearchSpace& space, const ChoiceProbabilityTable& table,
                                  const FilterConfig& config, const Evaluator& evaluate,
                                  const ConfigSampler& sampler, Rng& rng,
                                  std::size_t threads = 1);

}  // namespace nmsearch
