#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nmsearch/matrix.hpp"
#include "nmsearch/rng.hpp"

namespace nmsearch {

struct Dataset {
  Matrix<float> features;  // n x d, values in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::span<const float> sample(std::size_t i) const { return features.row(i); }

  // Copy of the given rows, in the given order.
  Dataset subset(std::span<const std::size_t> rows) const;
  // Throws InvalidInputError if empty, ragged or a label is out of range.
  void validate(std::size_t expected_dim) const;
};

struct CsvOptions {
  std::size_t num_classes = 0;
  std::size_t dim = 0;           // 0 = infer from the first data row
  double feature_max = 1.0;      // features are divided by this
};

// Rows "label,f1,...,fd"; an optional header row is detected by a
// non-numeric first token.
Dataset load_csv(const std::string& path, const CsvOptions& options);
Dataset parse_csv(const std::string& text, const CsvOptions& options);

struct SynthSpec {
  std::size_t n = 0;
  std::size_t classes = 4;
  std::size_t image_side = 16;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

// Class-conditional oriented gratings (orientation and frequency fixed per
// class, random phase and contrast per sample) plus Gaussian pixel noise,
// clipped to [0, 1].
Dataset synth_dataset(const SynthSpec& spec);

// Deterministic split of `data` into disjoint sets of the given sizes after a
// seeded shuffle.
std::vector<Dataset> split_dataset(const Dataset& data, std::span<const std::size_t> sizes,
                                   std::uint64_t seed);

}  // namespace nmsearch
