#include "nmsearch/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "nmsearch/errors.hpp"
#include "nmsearch/format.hpp"

namespace nmsearch {

ChoiceProbabilityTable ChoiceProbabilityTable::uniform(std::size_t layers, std::size_t levels) {
  if (levels == 0) throw InvalidInputError("probability table needs at least one level");
  ChoiceProbabilityTable t;
  t.p.assign(layers, std::vector<double>(levels, 1.0 / static_cast<double>(levels)));
  return t;
}

ChoiceProbabilityTable ChoiceProbabilityTable::uniform(const SearchSpace& space) {
  return uniform(space.num_layers(), space.num_levels());
}

void ChoiceProbabilityTable::validate() const {
  for (std::size_t l = 0; l < p.size(); ++l) {
    if (p[l].size() != levels()) throw InvalidInputError("probability table rows differ in length");
    double sum = 0.0;
    for (const double v : p[l]) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidInputError("probability table layer " + std::to_string(l) +
                                " has a negative or non-finite entry");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw InvalidInputError("probability table layer " + std::to_string(l) + " sums to " +
                              std::to_string(sum));
    }
  }
}

std::string ChoiceProbabilityTable::to_json(const SearchSpace& space) const {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < p.size(); ++l) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t s = 0; s < p[l].size(); ++s) row[space.levels[s].to_string()] = round9(p[l][s]);
    layers.push_back(row);
  }
  return layers.dump(2) + "\n";
}

SamplingMode parse_sampling_mode(const std::string& text) {
  if (text == "vanilla") return SamplingMode::vanilla;
  if (text == "two_step") return SamplingMode::two_step;
  throw ConfigError("unknown sampling mode \"" + text + "\" (expected vanilla or two_step)");
}

const char* to_string(SamplingMode mode) {
  return mode == SamplingMode::vanilla ? "vanilla" : "two_step";
}

const char* to_string(SampleOutcome outcome) {
  switch (outcome) {
    case SampleOutcome::direct: return "direct";
    case SampleOutcome::conditional: return "conditional";
    case SampleOutcome::interval_redraw: return "interval_redraw";
    case SampleOutcome::repair: return "repair";
  }
  return "?";
}

namespace {

std::size_t draw_index(std::span<const double> weights, double total, Rng& rng) {
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

}  // namespace

SparseConfig sample_from_table(const SearchSpace& space, const ChoiceProbabilityTable& table,
                               Rng& rng) {
  if (table.layers() != space.num_layers() || table.levels() != space.num_levels()) {
    throw ShapeError("probability table shape does not match the search space");
  }
  SparseConfig out{std::vector<SparsityLevel>(space.num_layers(), space.densest())};
  for (std::size_t l = 0; l < space.num_layers(); ++l) {
    double total = 0.0;
    for (const double v : table.p[l]) total += v;
    if (!(total > 0.0)) {
      throw SamplingExhaustedError("layer " + std::to_string(l) + " has no selectable level");
    }
    out[l] = space.levels[draw_index(table.p[l], total, rng)];
  }
  return out;
}

SparseConfig vanilla_sample(const SearchSpace& space, Rng& rng) {
  SparseConfig out{std::vector<SparsityLevel>(space.num_layers(), space.densest())};
  for (std::size_t l = 0; l < space.num_layers(); ++l) {
    out[l] = space.levels[uniform_index(rng, space.num_levels())];
  }
  return out;
}

TwoStepSampler::TwoStepSampler(const SearchSpace& space, const CostIntervals& intervals,
                               const ChoiceProbabilityTable& table, TwoStepOptions options)
    : space_(space), intervals_(intervals), table_(table), options_(options) {
  if (table_.layers() != space_.num_layers() || table_.levels() != space_.num_levels()) {
    throw ShapeError("probability table shape does not match the search space");
  }
  if (intervals_.boundaries.size() < 2) throw ConfigError("two-step sampling needs >= 1 interval");
  fixed_ = fixed_flops(space_.arch);
  const auto modules = space_.arch.prunable_modules();
  const std::size_t layers = modules.size();
  level_cost_.assign(layers, std::vector<Flops>(space_.num_levels()));
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t s = 0; s < space_.num_levels(); ++s) {
      level_cost_[l][s] = module_flops(modules[l], space_.arch.tokens(), space_.levels[s]);
    }
  }

  suffix_.assign(layers + 1, CostMass{});
  suffix_[layers] = CostMass{{0}, {1.0}, {0.0, 1.0}};
  exact_ = true;
  for (std::size_t l = layers; l-- > 0;) {
    std::map<Flops, double> combined;
    const CostMass& next = suffix_[l + 1];
    for (std::size_t s = 0; s < space_.num_levels(); ++s) {
      const double p = table_.p[l][s];
      if (p <= 0.0) continue;
      for (std::size_t i = 0; i < next.cost.size(); ++i) {
        combined[next.cost[i] + level_cost_[l][s]] += p * next.mass[i];
      }
    }
    if (combined.size() > options_.max_states) {
      exact_ = false;
      break;
    }
    CostMass& cm = suffix_[l];
    cm.cumulative.push_back(0.0);
    for (const auto& [c, m] : combined) {
      cm.cost.push_back(c);
      cm.mass.push_back(m);
      cm.cumulative.push_back(cm.cumulative.back() + m);
    }
  }
  if (!exact_) {
    suffix_.clear();
    return;
  }
  interval_mass_.resize(intervals_.count());
  for (std::size_t i = 0; i < intervals_.count(); ++i) {
    const double base = static_cast<double>(fixed_);
    interval_mass_[i] = suffix_mass(0, intervals_.boundaries[i] - base,
                                    intervals_.boundaries[i + 1] - base, i + 1 == intervals_.count());
  }
}

double TwoStepSampler::suffix_mass(std::size_t layer, double lo, double hi, bool closed_hi) const {
  const CostMass& cm = suffix_[layer];
  const auto begin = std::lower_bound(cm.cost.begin(), cm.cost.end(), lo,
                                      [](Flops c, double v) { return static_cast<double>(c) < v; });
  auto end = closed_hi
                 ? std::upper_bound(cm.cost.begin(), cm.cost.end(), hi,
                                    [](double v, Flops c) { return v < static_cast<double>(c); })
                 : std::lower_bound(cm.cost.begin(), cm.cost.end(), hi,
                                    [](Flops c, double v) { return static_cast<double>(c) < v; });
  if (end <= begin) return 0.0;
  // Sum the masses directly; differences of prefix sums can leave a tiny
  // positive residue for empty ranges.
  double total = 0.0;
  for (auto it = begin; it != end; ++it) total += cm.mass[static_cast<std::size_t>(it - cm.cost.begin())];
  return total;
}

std::optional<SparseConfig> TwoStepSampler::draw_conditional(std::size_t interval, Rng& rng) const {
  const std::size_t layers = space_.num_layers();
  const bool closed = interval + 1 == intervals_.count();
  double lo = intervals_.boundaries[interval] - static_cast<double>(fixed_);
  double hi = intervals_.boundaries[interval + 1] - static_cast<double>(fixed_);
  SparseConfig out{std::vector<SparsityLevel>(layers, space_.densest())};
  std::vector<double> weights(space_.num_levels());
  for (std::size_t l = 0; l < layers; ++l) {
    double total = 0.0;
    for (std::size_t s = 0; s < space_.num_levels(); ++s) {
      const double p = table_.p[l][s];
      const double c = static_cast<double>(level_cost_[l][s]);
      weights[s] = p > 0.0 ? p * suffix_mass(l + 1, lo - c, hi - c, closed) : 0.0;
      total += weights[s];
    }
    if (!(total > 0.0)) return std::nullopt;
    const std::size_t s = draw_index(weights, total, rng);
    out[l] = space_.levels[s];
    lo -= static_cast<double>(level_cost_[l][s]);
    hi -= static_cast<double>(level_cost_[l][s]);
  }
  return out;
}

std::optional<SparseConfig> TwoStepSampler::repair(SparseConfig config, std::size_t interval) const {
  const double lo = intervals_.boundaries[interval];
  const double hi = intervals_.boundaries[interval + 1];
  const bool closed = interval + 1 == intervals_.count();
  auto distance = [&](double f) {
    if (f < lo) return lo - f;
    if (f > hi) return f - hi;
    if (!closed && f == hi) return 0.5;
    return 0.0;
  };
  std::vector<std::size_t> idx(config.size());
  double flops = static_cast<double>(fixed_);
  for (std::size_t l = 0; l < config.size(); ++l) {
    idx[l] = *space_.level_index(config[l]);
    flops += static_cast<double>(level_cost_[l][idx[l]]);
  }
  double current = distance(flops);
  for (std::size_t round = 0; round < config.size() && current > 0.0; ++round) {
    double best = current;
    std::size_t best_layer = 0, best_level = 0;
    bool found = false;
    for (std::size_t l = 0; l < config.size(); ++l) {
      for (std::size_t s = 0; s < space_.num_levels(); ++s) {
        if (s == idx[l] || table_.p[l][s] <= 0.0) continue;
        const double f = flops - static_cast<double>(level_cost_[l][idx[l]]) +
                         static_cast<double>(level_cost_[l][s]);
        const double d = distance(f);
        if (d < best) {
          best = d;
          best_layer = l;
          best_level = s;
          found = true;
        }
      }
    }
    if (!found) break;
    flops += static_cast<double>(level_cost_[best_layer][best_level]) -
             static_cast<double>(level_cost_[best_layer][idx[best_layer]]);
    idx[best_layer] = best_level;
    config[best_layer] = space_.levels[best_level];
    current = best;
  }
  if (current > 0.0) return std::nullopt;
  return config;
}

SampleResult TwoStepSampler::sample(Rng& rng) const {
  SampleResult result;
  std::size_t interval = uniform_index(rng, intervals_.count());
  if (exact_ && !(interval_mass_[interval] > 0.0)) {
    std::vector<std::size_t> reachable;
    for (std::size_t i = 0; i < interval_mass_.size(); ++i) {
      if (interval_mass_[i] > 0.0) reachable.push_back(i);
    }
    if (reachable.empty()) {
      throw SamplingExhaustedError("no cost interval is reachable under the current choice table");
    }
    interval = reachable[uniform_index(rng, reachable.size())];
    result.outcome = SampleOutcome::interval_redraw;
  }
  result.interval = interval;

  SparseConfig last;
  for (std::size_t attempt = 0; attempt < options_.max_retries; ++attempt) {
    last = sample_from_table(space_, table_, rng);
    ++result.attempts;
    if (intervals_.contains(interval, static_cast<double>(config_flops(space_.arch, last)))) {
      result.config = std::move(last);
      return result;
    }
  }
  if (exact_) {
    if (auto c = draw_conditional(interval, rng)) {
      result.config = std::move(*c);
      if (result.outcome == SampleOutcome::direct) result.outcome = SampleOutcome::conditional;
      return result;
    }
  }
  if (last.size() == 0) last = sample_from_table(space_, table_, rng);
  if (auto c = repair(last, interval)) {
    result.config = std::move(*c);
    result.outcome = SampleOutcome::repair;
    return result;
  }
  throw SamplingExhaustedError("two-step sampling: no configuration found in interval " +
                               std::to_string(interval) + " [" +
                               std::to_string(intervals_.boundaries[interval]) + ", " +
                               std::to_string(intervals_.boundaries[interval + 1]) + "] after " +
                               std::to_string(result.attempts) + " attempts and repair");
}

SampleResult two_step_sample(const SearchSpace& space, const CostIntervals& intervals,
                             const ChoiceProbabilityTable& table, Rng& rng,
                             std::size_t max_retries) {
  TwoStepOptions options;
  options.max_retries = max_retries;
  return TwoStepSampler(space, intervals, table, options).sample(rng);
}

}  // namespace nmsearch
