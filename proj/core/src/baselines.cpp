#include "nmsearch/baselines.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "nmsearch/errors.hpp"
#include "nmsearch/format.hpp"

namespace nmsearch {

namespace {

constexpr double kMaxSparsity = 1.0 - 1e-9;

double weighted_mean(const std::vector<double>& base, const std::vector<double>& weight,
                     double scale) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    num += weight[i] * std::clamp(scale * base[i], 0.0, kMaxSparsity);
    den += weight[i];
  }
  return num / den;
}

}  // namespace

std::vector<double> er_sparsities(const ArchSpec& arch, double target_sparsity) {
  if (!(target_sparsity > 0.0 && target_sparsity < 1.0)) {
    throw ConfigError("ER: target sparsity must lie in (0, 1)");
  }
  const auto modules = arch.prunable_modules();
  if (modules.empty()) throw ConfigError("ER: arch has no prunable modules");
  std::vector<double> base, weight;
  for (const auto& m : modules) {
    const double r = static_cast<double>(m.rows);
    const double c = static_cast<double>(m.cols);
    base.push_back(std::max(0.0, 1.0 - (r + c) / (r * c)));
    weight.push_back(r * c);
  }
  double hi = 1.0;
  while (weighted_mean(base, weight, hi) < target_sparsity) {
    hi *= 2.0;
    if (hi > 1e12) {
      throw ConfigError("ER: target sparsity " + format9(target_sparsity) +
                        " is unreachable once every layer saturates");
    }
  }
  double lo = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (weighted_mean(base, weight, mid) < target_sparsity) lo = mid; else hi = mid;
  }
  std::vector<double> out;
  for (const double b : base) out.push_back(std::clamp(hi * b, 0.0, kMaxSparsity));
  return out;
}

SparsityLevel round_to_level(const SearchSpace& space, double sparsity) {
  SparsityLevel best = space.levels.front();
  double best_gap = std::abs(best.zero_fraction() - sparsity);
  for (const auto& level : space.levels) {
    const double gap = std::abs(level.zero_fraction() - sparsity);
    if (gap < best_gap || (gap == best_gap && level.density() > best.density())) {
      best = level;
      best_gap = gap;
    }
  }
  return best;
}

SparseConfig er_config(const SearchSpace& space, double target_sparsity) {
  const auto s = er_sparsities(space.arch, target_sparsity);
  SparseConfig out;
  for (const double v : s) out.levels.push_back(round_to_level(space, v));
  return out;
}

std::vector<BaselinePoint> compare_er(const Supernet& net, const std::vector<double>& targets,
                                      const std::vector<Candidate>& frontier, const Dataset& data,
                                      std::size_t threads) {
  std::vector<BaselinePoint> out;
  for (const double t : targets) {
    BaselinePoint p;
    p.method = "er";
    p.target_sparsity = t;
    SparseConfig config = er_config(net.space(), t);
    p.candidate = Candidate::make(net.space(), config, evaluate(net, config, data, threads));
    p.frontier_accuracy_at_flops = -1.0;
    for (const auto& f : frontier) {
      if (f.flops <= p.candidate.flops) {
        p.frontier_accuracy_at_flops = std::max(p.frontier_accuracy_at_flops, f.accuracy);
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string baseline_json(const SearchSpace& space, const std::vector<BaselinePoint>& points) {
  const double dense = static_cast<double>(space.dense());
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : points) {
    list.push_back({{"method", p.method},
                    {"target_sparsity", round9(p.target_sparsity)},
                    {"config", p.candidate.config.to_strings()},
                    {"flops", p.candidate.flops},
                    {"flops_ratio_vs_dense", round9(static_cast<double>(p.candidate.flops) / dense)},
                    {"accuracy", round9(p.candidate.accuracy)},
                    {"searched_accuracy_at_flops", round9(p.frontier_accuracy_at_flops)}});
  }
  return list.dump(2) + "\n";
}

EstimatorComparison compare_estimators(const DenseModel& dense, const Supernet& supernet,
                                       const CostIntervals& intervals,
                                       const ChoiceProbabilityTable& table, const EvoConfig& config,
                                       const Dataset& search_data, const Dataset& eval_data,
                                       std::size_t threads) {
  const Supernet masked_dense = Supernet::from_pretrained(supernet.space(), dense);
  // Parallelism lives in the search; each evaluation is single-threaded.
  const Evaluator dense_eval = [&](const SparseConfig& c) {
    return evaluate(masked_dense, c, search_data);
  };
  const Evaluator super_eval = [&](const SparseConfig& c) {
    return evaluate(supernet, c, search_data);
  };
  EstimatorComparison out;
  out.dense_search = evolutionary_search(supernet.space(), intervals, table, config, dense_eval, threads);
  out.supernet_search = evolutionary_search(supernet.space(), intervals, table, config, super_eval, threads);
  for (const auto& [name, result] : {std::pair<const char*, const SearchResult*>{"dense", &out.dense_search},
                                     {"supernet", &out.supernet_search}}) {
    for (const auto& c : result->pareto) {
      out.rows.push_back({name, c, evaluate(supernet, c.config, eval_data, threads)});
    }
  }
  return out;
}

std::string EstimatorComparison::to_json(const SearchSpace& space) const {
  const double dense = static_cast<double>(space.dense());
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : rows) {
    list.push_back({{"estimator", r.estimator},
                    {"config", r.candidate.config.to_strings()},
                    {"flops", r.candidate.flops},
                    {"flops_ratio_vs_dense", round9(static_cast<double>(r.candidate.flops) / dense)},
                    {"estimated_accuracy", round9(r.candidate.accuracy)},
                    {"inherited_accuracy", round9(r.inherited_accuracy)}});
  }
  // Matched-FLOPs view: for every frontier FLOPs value, the best inherited
  // accuracy each estimator reaches at or below it.
  std::vector<Flops> levels;
  for (const auto& r : rows) levels.push_back(r.candidate.flops);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  nlohmann::json matched = nlohmann::json::array();
  for (const Flops f : levels) {
    double best_dense = -1.0, best_super = -1.0;
    for (const auto& r : rows) {
      if (r.candidate.flops > f) continue;
      double& slot = r.estimator == "dense" ? best_dense : best_super;
      slot = std::max(slot, r.inherited_accuracy);
    }
    matched.push_back({{"flops", f},
                       {"flops_ratio_vs_dense", round9(static_cast<double>(f) / dense)},
                       {"dense_estimator_accuracy", round9(best_dense)},
                       {"supernet_estimator_accuracy", round9(best_super)}});
  }
  return nlohmann::json{{"frontiers", list}, {"matched_flops", matched}}.dump(2) + "\n";
}

}  // namespace nmsearch
