#include "nmsearch/search_space.hpp"

#include <algorithm>
#include <cmath>

#include "nmsearch/errors.hpp"

namespace nmsearch {

SearchSpace SearchSpace::make(const ArchSpec& arch, std::vector<SparsityLevel> levels,
                              double c_upper_fraction) {
  arch.validate();
  if (levels.empty()) throw ConfigError("search space: no sparsity levels");
  for (auto& l : levels) l = SparsityLevel::make(l.n, l.m);
  // Sparsest first; equal densities ordered by M.
  std::sort(levels.begin(), levels.end(), [](SparsityLevel a, SparsityLevel b) {
    const auto lhs = std::uint64_t{a.n} * b.m;
    const auto rhs = std::uint64_t{b.n} * a.m;
    return lhs != rhs ? lhs < rhs : a.m < b.m;
  });
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  if (!levels.back().is_dense()) {
    throw ConfigError("search space must contain a dense M:M level");
  }
  for (const auto& module : arch.prunable_modules()) {
    for (const auto& l : levels) {
      if (module.cols % l.m != 0) {
        throw ConfigError(std::string("module ") + std::to_string(module.index) + " (" +
                          to_string(module.role) + ") has reduction axis " +
                          std::to_string(module.cols) + " not divisible by M=" +
                          std::to_string(l.m));
      }
    }
  }
  if (!(c_upper_fraction > 0.0) || !std::isfinite(c_upper_fraction)) {
    throw ConfigError("c_upper fraction must be positive");
  }
  SearchSpace s;
  s.arch = arch;
  s.levels = std::move(levels);
  s.c_upper = c_upper_fraction * static_cast<double>(dense_flops(arch));
  return s;
}

std::optional<std::size_t> SearchSpace::level_index(SparsityLevel level) const {
  const auto it = std::find(levels.begin(), levels.end(), level);
  if (it == levels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - levels.begin());
}

double SearchSpace::c_lower() const {
  return static_cast<double>(config_flops(arch, uniform_level_config(*this, sparsest())));
}

std::optional<Violation> validate(const SearchSpace& space, const SparseConfig& config) {
  if (config.size() != space.num_layers()) {
    return Violation{Violation::Kind::length, 0,
                     "config has " + std::to_string(config.size()) + " levels, expected " +
                         std::to_string(space.num_layers())};
  }
  for (std::size_t l = 0; l < config.size(); ++l) {
    if (!space.level_index(config[l])) {
      return Violation{Violation::Kind::membership, l,
                       "layer " + std::to_string(l) + " uses unsupported level " +
                           config[l].to_string()};
    }
  }
  const double f = static_cast<double>(config_flops(space.arch, config));
  if (f > space.c_upper) {
    return Violation{Violation::Kind::cost, 0,
                     "FLOPs " + std::to_string(static_cast<Flops>(f)) + " exceed c_upper " +
                         std::to_string(space.c_upper)};
  }
  return std::nullopt;
}

std::vector<SparseConfig> enumerate(const SearchSpace& space, std::size_t max_count) {
  const std::size_t k = space.num_levels();
  const std::size_t layers = space.num_layers();
  std::size_t total = 1;
  for (std::size_t l = 0; l < layers; ++l) {
    if (total > max_count / k) {
      throw ConfigError("enumerate: space of " + std::to_string(k) + "^" + std::to_string(layers) +
                        " configs exceeds max_count " + std::to_string(max_count));
    }
    total *= k;
  }
  if (total > max_count) {
    throw ConfigError("enumerate: " + std::to_string(total) + " configs exceed max_count " +
                      std::to_string(max_count));
  }
  std::vector<SparseConfig> out;
  std::vector<std::size_t> digits(layers, 0);
  SparseConfig config{std::vector<SparsityLevel>(layers, space.levels.front())};
  for (std::size_t n = 0; n < total; ++n) {
    for (std::size_t l = 0; l < layers; ++l) config[l] = space.levels[digits[l]];
    if (static_cast<double>(config_flops(space.arch, config)) <= space.c_upper) out.push_back(config);
    for (std::size_t l = layers; l-- > 0;) {
      if (++digits[l] < k) break;
      digits[l] = 0;
    }
  }
  return out;
}

SparseConfig uniform_level_config(const SearchSpace& space, SparsityLevel level) {
  if (!space.level_index(level)) {
    throw ConfigError("level " + level.to_string() + " is not in the search space");
  }
  return SparseConfig{std::vector<SparsityLevel>(space.num_layers(), level)};
}

CostIntervals build_intervals(const SearchSpace& space, std::size_t k) {
  return build_intervals(space.c_lower(), space.c_upper, k);
}

}  // namespace nmsearch
