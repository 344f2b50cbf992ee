#pragma once

// Configuration samplers for supernet training.
//
// vanilla_sample draws every layer's level uniformly and independently, which
// concentrates FLOPs around the mean. two_step_sample first picks a FLOPs
// interval uniformly, then draws a configuration from the per-layer choice
// probabilities conditioned on landing in that interval.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nmsearch/cost_model.hpp"
#include "nmsearch/rng.hpp"
#include "nmsearch/search_space.hpp"

namespace nmsearch {

// p[layer][level index], level indices as in SearchSpace::levels.
struct ChoiceProbabilityTable {
  std::vector<std::vector<double>> p;

  static ChoiceProbabilityTable uniform(std::size_t layers, std::size_t levels);
  static ChoiceProbabilityTable uniform(const SearchSpace& space);

  std::size_t layers() const { return p.size(); }
  std::size_t levels() const { return p.empty() ? 0 : p.front().size(); }
  // Throws InvalidInputError on negative entries or rows not summing to 1
  // within 1e-9.
  void validate() const;
  std::string to_json(const SearchSpace& space) const;

  friend bool operator==(const ChoiceProbabilityTable&, const ChoiceProbabilityTable&) = default;
};

enum class SamplingMode { vanilla, two_step };
SamplingMode parse_sampling_mode(const std::string& text);
const char* to_string(SamplingMode mode);

enum class SampleOutcome {
  direct,           // accepted by rejection sampling within max_retries
  conditional,      // exact draw from the conditional distribution
  interval_redraw,  // chosen interval unreachable under the table; redrawn
  repair,           // greedy single-layer repair into the interval
};
const char* to_string(SampleOutcome outcome);
inline bool is_fallback(SampleOutcome o) {
  return o == SampleOutcome::interval_redraw || o == SampleOutcome::repair;
}

struct SampleResult {
  SparseConfig config;
  std::optional<std::size_t> interval;
  SampleOutcome outcome = SampleOutcome::direct;
  std::size_t attempts = 0;
};

// Independent per-layer draw from the table.
SparseConfig sample_from_table(const SearchSpace& space, const ChoiceProbabilityTable& table,
                               Rng& rng);

SparseConfig vanilla_sample(const SearchSpace& space, Rng& rng);

struct TwoStepOptions {
  std::size_t max_retries = 200;
  // Cap on distinct partial FLOPs sums kept per layer by the exact sampler;
  // beyond it only rejection and repair are used.
  std::size_t max_states = 1u << 18;
};

// Holds the per-table state of two-step sampling: per-layer suffix FLOPs
// distributions used for exact conditional draws and for detecting
// intervals with zero probability mass.
class TwoStepSampler {
 public:
  TwoStepSampler(const SearchSpace& space, const CostIntervals& intervals,
                 const ChoiceProbabilityTable& table, TwoStepOptions options = {});

  SampleResult sample(Rng& rng) const;

  // Probability mass of each interval under the independent per-layer
  // table; empty when the exact sampler is disabled by max_states.
  const std::vector<double>& interval_mass() const { return interval_mass_; }
  bool exact_available() const { return exact_; }

 private:
  struct CostMass {
    std::vector<Flops> cost;         // ascending
    std::vector<double> mass;
    std::vector<double> cumulative;  // cumulative[i] = sum of mass[0..i)
  };

  double suffix_mass(std::size_t layer, double lo, double hi, bool closed_hi) const;
  std::optional<SparseConfig> draw_conditional(std::size_t interval, Rng& rng) const;
  std::optional<SparseConfig> repair(SparseConfig config, std::size_t interval) const;

  SearchSpace space_;
  CostIntervals intervals_;
  ChoiceProbabilityTable table_;
  TwoStepOptions options_;
  Flops fixed_ = 0;
  std::vector<std::vector<Flops>> level_cost_;  // [layer][level]
  std::vector<CostMass> suffix_;               // suffix_[l]: layers l..L-1; suffix_[L] = {0}
  std::vector<double> interval_mass_;
  bool exact_ = false;
};

SampleResult two_step_sample(const SearchSpace& space, const CostIntervals& intervals,
                             const ChoiceProbabilityTable& table, Rng& rng,
                             std::size_t max_retries = 200);

}  // namespace nmsearch
