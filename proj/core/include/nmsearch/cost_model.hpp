#pragma once

// FLOPs accounting. One multiply-accumulate counts as 2 FLOPs.
//
//   prunable module (rows x cols) at N:M : 2 * tokens * rows * cols * N / M
//   per block, attention scores + value mix: 2 * (2 * tokens^2 * embed_dim)
//   patch embedding                      : 2 * tokens * patch_dim * embed_dim
//   classification head                  : 2 * embed_dim * num_classes
//
// Softmax, layer norm, activations, residual adds, biases and pooling count
// as 0. A linear_stack arch has no fixed cost at all.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "nmsearch/arch.hpp"
#include "nmsearch/sparse_config.hpp"

namespace nmsearch {

using Flops = std::uint64_t;

Flops module_flops(std::size_t rows, std::size_t cols, std::size_t tokens, SparsityLevel level);
Flops module_flops(const PrunableModule& module, std::size_t tokens, SparsityLevel level);
Flops fixed_flops(const ArchSpec& arch);
Flops config_flops(const ArchSpec& arch, const SparseConfig& config);
Flops dense_flops(const ArchSpec& arch);
// Sum over prunable modules only.
Flops prunable_flops(const ArchSpec& arch, const SparseConfig& config);

// Boundaries C_1 < ... < C_K. Interval i is [C_i, C_{i+1}); the last one is
// closed on the right.
struct CostIntervals {
  std::vector<double> boundaries;

  double c_lower() const { return boundaries.front(); }
  double c_upper() const { return boundaries.back(); }
  std::size_t count() const { return boundaries.size() - 1; }
  bool contains(std::size_t interval, double flops) const;
};

CostIntervals build_intervals(double c_lower, double c_upper, std::size_t k);

// Index of the interval containing `flops`, or nullopt outside [c_lower, c_upper].
std::optional<std::size_t> interval_of(const CostIntervals& intervals, double flops);

}  // namespace nmsearch
