#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nmsearch/dataset.hpp"
#include "nmsearch/evo_search.hpp"
#include "nmsearch/search_space.hpp"
#include "nmsearch/supernet.hpp"

namespace nmsearch {

// Per-module unstructured sparsity from the Erdos-Renyi rule: raw score
// 1 - (rows + cols) / (rows * cols), scaled by one global factor so that the
// parameter-weighted mean equals `target_sparsity`, each value clamped to
// [0, 1). Biases are not counted.
std::vector<double> er_sparsities(const ArchSpec& arch, double target_sparsity);

// Level of `space` whose zero fraction 1 - N/M is nearest to `sparsity`;
// ties go to the denser level.
SparsityLevel round_to_level(const SearchSpace& space, double sparsity);

SparseConfig er_config(const SearchSpace& space, double target_sparsity);

struct BaselinePoint {
  std::string method;
  double target_sparsity = 0.0;
  Candidate candidate;
  double frontier_accuracy_at_flops = 0.0;  // best searched accuracy with <= FLOPs; -1 if none
};

// Evaluates ER configurations for each target on `data` with the supernet and
// lines them up against a searched frontier.
std::vector<BaselinePoint> compare_er(const Supernet& net, const std::vector<double>& targets,
                                      const std::vector<Candidate>& frontier, const Dataset& data,
                                      std::size_t threads = 1);
std::string baseline_json(const SearchSpace& space, const std::vector<BaselinePoint>& points);

struct EstimatorRow {
  std::string estimator;  // "dense" or "supernet"
  Candidate candidate;    // accuracy as seen by that estimator
  double inherited_accuracy = 0.0;  // accuracy of the subnet inherited from the trained supernet
};

struct EstimatorComparison {
  SearchResult dense_search;
  SearchResult supernet_search;
  std::vector<EstimatorRow> rows;

  std::string to_json(const SearchSpace& space) const;
};

// Runs the same search twice with identical seeds and budgets, once scoring
// configurations by masking the dense pretrained weights and once by the
// trained supernet. Frontier members of both runs are then scored on
// `eval_data` as inherited from the trained supernet.
EstimatorComparison compare_estimators(const DenseModel& dense, const Supernet& supernet,
                                       const CostIntervals& intervals,
                                       const ChoiceProbabilityTable& table, const EvoConfig& config,
                                       const Dataset& search_data, const Dataset& eval_data,
                                       std::size_t threads = 1);

}  // namespace nmsearch
