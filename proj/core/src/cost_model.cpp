#include "nmsearch/cost_model.hpp"

#include "nmsearch/errors.hpp"

namespace nmsearch {

Flops module_flops(std::size_t rows, std::size_t cols, std::size_t tokens, SparsityLevel level) {
  if (level.m == 0 || cols % level.m != 0) {
    throw ShapeError("module_flops: cols=" + std::to_string(cols) + " not divisible by M=" +
                     std::to_string(level.m));
  }
  const Flops dense = Flops{2} * tokens * rows * cols;
  return dense / level.m * level.n;
}

Flops module_flops(const PrunableModule& module, std::size_t tokens, SparsityLevel level) {
  return module_flops(module.rows, module.cols, tokens, level);
}

Flops fixed_flops(const ArchSpec& arch) {
  if (arch.kind == ArchKind::linear_stack) return 0;
  const Flops t = arch.tokens();
  const Flops d = arch.embed_dim;
  const Flops patch_embed = 2 * t * arch.patch_dim() * d;
  const Flops attention = arch.blocks * 2 * (2 * t * t * d);
  const Flops head = 2 * d * arch.num_classes;
  return patch_embed + attention + head;
}

Flops prunable_flops(const ArchSpec& arch, const SparseConfig& config) {
  const auto modules = arch.prunable_modules();
  if (config.size() != modules.size()) {
    throw ShapeError("config has " + std::to_string(config.size()) + " levels, arch has " +
                     std::to_string(modules.size()) + " prunable modules");
  }
  Flops total = 0;
  for (std::size_t i = 0; i < modules.size(); ++i) {
    total += module_flops(modules[i], arch.tokens(), config[i]);
  }
  return total;
}

Flops config_flops(const ArchSpec& arch, const SparseConfig& config) {
  return fixed_flops(arch) + prunable_flops(arch, config);
}

Flops dense_flops(const ArchSpec& arch) {
  Flops total = fixed_flops(arch);
  for (const auto& m : arch.prunable_modules()) total += Flops{2} * arch.tokens() * m.rows * m.cols;
  return total;
}

bool CostIntervals::contains(std::size_t interval, double flops) const {
  if (interval + 1 >= boundaries.size()) return false;
  const double lo = boundaries[interval];
  const double hi = boundaries[interval + 1];
  if (interval + 2 == boundaries.size()) return flops >= lo && flops <= hi;
  return flops >= lo && flops < hi;
}

CostIntervals build_intervals(double c_lower, double c_upper, std::size_t k) {
  if (k < 2) throw ConfigError("build_intervals: need at least 2 boundaries, got " + std::to_string(k));
  if (!(c_upper > c_lower)) {
    throw ConfigError("build_intervals: c_upper (" + std::to_string(c_upper) +
                      ") must exceed c_lower (" + std::to_string(c_lower) + ")");
  }
  CostIntervals out;
  out.boundaries.resize(k);
  const double step = (c_upper - c_lower) / static_cast<double>(k - 1);
  for (std::size_t i = 0; i < k; ++i) out.boundaries[i] = c_lower + step * static_cast<double>(i);
  out.boundaries.front() = c_lower;
  out.boundaries.back() = c_upper;
  return out;
}

std::optional<std::size_t> interval_of(const CostIntervals& intervals, double flops) {
  if (intervals.boundaries.size() < 2) return std::nullopt;
  if (flops < intervals.c_lower() || flops > intervals.c_upper()) return std::nullopt;
  // Largest i with boundaries[i] <= flops, capped at the last interval.
  std::size_t lo = 0;
  std::size_t hi = intervals.count();
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (intervals.boundaries[mid] <= flops) lo = mid; else hi = mid;
  }
  return lo;
}

}  // namespace nmsearch
