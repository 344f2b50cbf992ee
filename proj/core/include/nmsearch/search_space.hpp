#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nmsearch/arch.hpp"
#include "nmsearch/cost_model.hpp"
#include "nmsearch/sparse_config.hpp"

namespace nmsearch {

struct SearchSpace {
  ArchSpec arch;
  std::vector<SparsityLevel> levels;  // sorted sparsest first
  double c_upper = 0.0;

  // Validates the arch, sorts and deduplicates `levels`, and requires a dense
  // level plus divisibility of every prunable module by every M.
  static SearchSpace make(const ArchSpec& arch, std::vector<SparsityLevel> levels,
                          double c_upper_fraction);

  std::size_t num_layers() const { return arch.num_prunable(); }
  std::size_t num_levels() const { return levels.size(); }
  SparsityLevel sparsest() const { return levels.front(); }
  SparsityLevel densest() const { return levels.back(); }
  // Position of `level` in `levels`, or nullopt.
  std::optional<std::size_t> level_index(SparsityLevel level) const;
  double c_lower() const;
  Flops dense() const { return dense_flops(arch); }
};

struct Violation {
  enum class Kind { length, membership, cost };
  Kind kind;
  std::size_t layer = 0;  // meaningful for membership
  std::string message;
};

std::optional<Violation> validate(const SearchSpace& space, const SparseConfig& config);

// Every configuration with F <= c_upper, in lexicographic order of level
// indices (layer 0 most significant). Refuses when K^L > max_count.
std::vector<SparseConfig> enumerate(const SearchSpace& space, std::size_t max_count);

SparseConfig uniform_level_config(const SearchSpace& space, SparsityLevel level);

// Intervals from the space's c_lower to its c_upper with k boundaries.
CostIntervals build_intervals(const SearchSpace& space, std::size_t k);

}  // namespace nmsearch
