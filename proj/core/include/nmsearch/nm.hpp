#pragma once

// N:M semi-structured sparsity: group masks, layer masks, subset checks and
// the packed storage format consumed by N:M matmul units.
//
// Groups are taken along the reduction (input) axis of a linear module, i.e.
// along each row of a (out_features x in_features) weight matrix. Group g of
// row r covers columns [g*M, (g+1)*M).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nmsearch/errors.hpp"
#include "nmsearch/matrix.hpp"

namespace nmsearch {

struct SparsityLevel {
  std::uint32_t n = 1;
  std::uint32_t m = 1;

  // Throws InvalidInputError unless 1 <= n <= m and m is a power of two.
  static SparsityLevel make(std::uint32_t n, std::uint32_t m);
  // Parses "N:M".
  static SparsityLevel parse(std::string_view text);

  std::string to_string() const;
  double density() const noexcept { return static_cast<double>(n) / m; }
  double zero_fraction() const noexcept { return 1.0 - density(); }
  bool is_dense() const noexcept { return n == m; }
  // Bits needed to address one position inside a group.
  unsigned index_bits() const noexcept;

  friend bool operator==(const SparsityLevel&, const SparsityLevel&) = default;
  friend auto operator<=>(const SparsityLevel&, const SparsityLevel&) = default;
};

enum class SaliencyMetric { magnitude };

struct WeightGroup {
  std::span<const float> values;
  std::size_t base_offset = 0;
};

// Binary mask with the shape of the owning weight matrix.
struct MaskTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  std::size_t count() const;
  friend bool operator==(const MaskTensor&, const MaskTensor&) = default;
};

template <typename T>
Matrix<T> saliency(const Matrix<T>& weights, SaliencyMetric metric = SaliencyMetric::magnitude) {
  Matrix<T> out(weights.rows(), weights.cols());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const T w = weights[i];
    if (!std::isfinite(static_cast<double>(w))) {
      throw InvalidInputError("saliency: non-finite weight at flat index " + std::to_string(i));
    }
    switch (metric) {
      case SaliencyMetric::magnitude:
        out[i] = std::abs(w);
        break;
    }
  }
  return out;
}

// Keeps exactly `level.n` positions: the highest scores, lowest index first
// among equal scores. The keep set for a smaller n is always a prefix of the
// ranking, which gives the subset chain across levels of the same m.
template <typename T>
std::vector<std::uint8_t> group_mask(std::span<const T> scores, SparsityLevel level) {
  if (scores.size() != level.m) {
    throw ShapeError("group_mask: expected " + std::to_string(level.m) + " scores, got " +
                     std::to_string(scores.size()));
  }
  std::vector<std::uint8_t> mask(scores.size(), 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) ++rank;
    }
    mask[i] = rank < level.n ? 1 : 0;
  }
  return mask;
}

// Validates the precondition of layer_mask / encode_sparse.
void check_groupable(std::size_t cols, SparsityLevel level);

template <typename T>
MaskTensor layer_mask(const Matrix<T>& weights, SparsityLevel level,
                      SaliencyMetric metric = SaliencyMetric::magnitude) {
  check_groupable(weights.cols(), level);
  MaskTensor mask{weights.rows(), weights.cols(), std::vector<std::uint8_t>(weights.size(), 1)};
  if (level.is_dense()) {
    // Still reject non-finite input for consistency with the sparse path.
    (void)saliency(weights, metric);
    return mask;
  }
  const Matrix<T> scores = saliency(weights, metric);
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    const auto row = scores.row(r);
    for (std::size_t g = 0; g < weights.cols(); g += level.m) {
      const auto bits = group_mask<T>(row.subspan(g, level.m), level);
      std::copy(bits.begin(), bits.end(), mask.bits.begin() + r * weights.cols() + g);
    }
  }
  return mask;
}

template <typename T>
Matrix<T> apply_mask(const Matrix<T>& weights, const MaskTensor& mask) {
  if (weights.rows() != mask.rows || weights.cols() != mask.cols) {
    throw ShapeError("apply_mask: weight and mask shapes differ");
  }
  Matrix<T> out(weights.rows(), weights.cols());
  for (std::size_t i = 0; i < weights.size(); ++i) out[i] = mask.bits[i] ? weights[i] : T{0};
  return out;
}

// True iff every kept position of `sparser` is kept in `denser`.
bool is_subset(const MaskTensor& sparser, const MaskTensor& denser);

struct SparseEncoding {
  std::vector<float> values;
  std::vector<std::uint32_t> indices;  // position within the group, < m
  SparsityLevel level;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t group_count() const { return level.m == 0 ? 0 : rows * cols / level.m; }
};

SparseEncoding encode_sparse(const Matrix<float>& weights, SparsityLevel level,
                             SaliencyMetric metric = SaliencyMetric::magnitude);
Matrix<float> decode_sparse(const SparseEncoding& enc);

// Binary blob: u32 LE rows, cols, N, M; f32 LE values; indices packed at
// log2(M) bits each, LSB-first within each byte.
std::vector<std::uint8_t> serialize_encoding(const SparseEncoding& enc);
SparseEncoding deserialize_encoding(std::span<const std::uint8_t> blob);

// Packs `indices` into a bit stream of `bits` per entry.
std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> indices, unsigned bits);
std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> packed, std::size_t count,
                                          unsigned bits);

}  // namespace nmsearch
