#include "nmsearch/choice_filter.hpp"

#include <nlohmann/json.hpp>

#include "nmsearch/errors.hpp"
#include "nmsearch/format.hpp"
#include "nmsearch/parallel.hpp"

namespace nmsearch {

ChoiceScoreTable ChoiceScoreTable::zeros(std::size_t layers, std::size_t levels) {
  ChoiceScoreTable t;
  t.mean.assign(layers, std::vector<double>(levels, 0.0));
  t.count.assign(layers, std::vector<std::size_t>(levels, 0));
  return t;
}

ChoiceScoreTable accumulate(ChoiceScoreTable table, const SearchSpace& space,
                            const SparseConfig& config, double score) {
  if (config.size() != table.mean.size()) throw ShapeError("accumulate: config length mismatch");
  if (!(score >= 0.0)) throw InvalidInputError("accumulate: score must be >= 0");
  for (std::size_t l = 0; l < config.size(); ++l) {
    const auto s = space.level_index(config[l]);
    if (!s) throw ConfigError("accumulate: level " + config[l].to_string() + " not in space");
    auto& n = table.count[l][*s];
    auto& m = table.mean[l][*s];
    ++n;
    m += (score - m) / static_cast<double>(n);
  }
  return table;
}

void FilterConfig::validate() const {
  if (n_eval < 1) throw ConfigError("filter: n_eval must be >= 1");
  if (!(acc_threshold >= 0.0 && acc_threshold <= 1.0)) {
    throw ConfigError("filter: acc_threshold must lie in [0, 1]");
  }
}

ChoiceProbabilityTable filter_table(const ChoiceProbabilityTable& table,
                                    const ChoiceScoreTable& scores, double acc_threshold,
                                    std::vector<std::vector<bool>>* zeroed) {
  ChoiceProbabilityTable out = table;
  if (zeroed) zeroed->assign(table.layers(), std::vector<bool>(table.levels(), false));
  for (std::size_t l = 0; l < table.layers(); ++l) {
    double observed_prior = 0.0;
    double kept_score = 0.0;
    for (std::size_t s = 0; s < table.levels(); ++s) {
      if (scores.count[l][s] == 0) continue;
      observed_prior += table.p[l][s];
      if (scores.mean[l][s] >= acc_threshold) kept_score += scores.mean[l][s];
    }
    double unobserved = 0.0;
    for (std::size_t s = 0; s < table.levels(); ++s) {
      if (scores.count[l][s] == 0) unobserved += table.p[l][s];
    }
    // Observed mass is redistributed by score; if every observed choice was
    // dropped, the unobserved choices absorb the whole row.
    const double observed_share = kept_score > 0.0 ? observed_prior : 0.0;
    const double norm = observed_share + unobserved;
    if (!(norm > 0.0)) {
      throw FilterError(l, "every sparsity level of layer " + std::to_string(l) +
                               " fell below the accuracy threshold");
    }
    for (std::size_t s = 0; s < table.levels(); ++s) {
      double p = 0.0;
      if (scores.count[l][s] == 0) {
        p = table.p[l][s];
      } else if (scores.mean[l][s] >= acc_threshold) {
        p = observed_share * scores.mean[l][s] / kept_score;
      } else if (zeroed) {
        (*zeroed)[l][s] = true;
      }
      out.p[l][s] = p / norm;
    }
  }
  return out;
}

FilterReport update_probabilities(const SearchSpace& space, const ChoiceProbabilityTable& table,
                                  const FilterConfig& config, const Evaluator& evaluate,
                                  const ConfigSampler& sampler, Rng& rng, std::size_t threads) {
  config.validate();
  FilterReport report;
  report.evaluated.reserve(config.n_eval);
  for (std::size_t n = 0; n < config.n_eval; ++n) report.evaluated.push_back(sampler(table, rng));
  report.accuracies.assign(config.n_eval, 0.0);
  parallel_for(config.n_eval, threads,
               [&](std::size_t i) { report.accuracies[i] = evaluate(report.evaluated[i]); });
  report.scores = ChoiceScoreTable::zeros(space.num_layers(), space.num_levels());
  for (std::size_t n = 0; n < config.n_eval; ++n) {
    report.scores = accumulate(std::move(report.scores), space, report.evaluated[n],
                               report.accuracies[n]);
  }
  report.table = filter_table(table, report.scores, config.acc_threshold, &report.zeroed);
  return report;
}

std::string FilterReport::to_json(const SearchSpace& space) const {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t l = 0; l < scores.mean.size(); ++l) {
    for (std::size_t s = 0; s < scores.mean[l].size(); ++s) {
      entries.push_back({{"layer", l},
                         {"level", space.levels[s].to_string()},
                         {"mean_score", round9(scores.mean[l][s])},
                         {"count", scores.count[l][s]},
                         {"zeroed", static_cast<bool>(zeroed[l][s])},
                         {"probability", round9(table.p[l][s])}});
    }
  }
  return entries.dump();
}

}  // namespace nmsearch
