#pragma once

#include <string>
#include <vector>

#include "nmsearch/nm.hpp"

namespace nmsearch {

// One sparsity level per prunable module, in module order.
struct SparseConfig {
  std::vector<SparsityLevel> levels;

  std::size_t size() const noexcept { return levels.size(); }
  const SparsityLevel& operator[](std::size_t i) const { return levels[i]; }
  SparsityLevel& operator[](std::size_t i) { return levels[i]; }

  // ["2:4","1:4",...]
  std::vector<std::string> to_strings() const;
  static SparseConfig from_strings(const std::vector<std::string>& items);
  std::string to_json() const;
  static SparseConfig from_json(const std::string& text);

  friend bool operator==(const SparseConfig&, const SparseConfig&) = default;
  friend auto operator<=>(const SparseConfig&, const SparseConfig&) = default;
};

}  // namespace nmsearch
