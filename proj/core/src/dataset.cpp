#include "nmsearch/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nmsearch/errors.hpp"

namespace nmsearch {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features = Matrix<float>(rows.size(), dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = sample(rows[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

void Dataset::validate(std::size_t expected_dim) const {
  if (labels.empty()) throw InvalidInputError("dataset is empty");
  if (features.rows() != labels.size()) throw InvalidInputError("dataset: feature/label count mismatch");
  if (expected_dim != 0 && dim() != expected_dim) {
    throw InvalidInputError("dataset: feature dimension " + std::to_string(dim()) +
                            " does not match arch input size " + std::to_string(expected_dim));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw InvalidInputError("dataset: label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " is >= num_classes");
    }
  }
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
      field.remove_suffix(1);
    }
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& v) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(v);
}

}  // namespace

Dataset parse_csv(const std::string& text, const CsvOptions& options) {
  if (options.num_classes == 0) throw InvalidInputError("load_csv: num_classes must be set");
  if (!(options.feature_max > 0.0)) throw InvalidInputError("load_csv: feature_max must be > 0");
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = options.dim;
  std::vector<float> values;
  std::vector<std::size_t> labels;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    double label_value = 0.0;
    if (!parse_double(fields[0], label_value)) {
      if (first_content) {
        first_content = false;
        continue;  // header
      }
      throw ParseError(line_no, "non-numeric label \"" + std::string(fields[0]) + "\"");
    }
    first_content = false;
    if (label_value < 0 || label_value != std::floor(label_value) ||
        label_value >= static_cast<double>(options.num_classes)) {
      throw ParseError(line_no, "label " + std::string(fields[0]) + " out of range [0, " +
                                    std::to_string(options.num_classes) + ")");
    }
    const std::size_t row_dim = fields.size() - 1;
    if (dim == 0) dim = row_dim;
    if (row_dim != dim || row_dim == 0) {
      throw ParseError(line_no, "expected " + std::to_string(dim) + " features, got " +
                                    std::to_string(row_dim));
    }
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = 0.0;
      if (!parse_double(fields[i], v)) {
        throw ParseError(line_no, "non-numeric feature \"" + std::string(fields[i]) + "\"");
      }
      values.push_back(static_cast<float>(std::clamp(v / options.feature_max, 0.0, 1.0)));
    }
    labels.push_back(static_cast<std::size_t>(label_value));
  }
  if (labels.empty()) throw InvalidInputError("load_csv: no data rows");
  Dataset out;
  out.num_classes = options.num_classes;
  out.features = Matrix<float>(labels.size(), dim, std::move(values));
  out.labels = std::move(labels);
  return out;
}

Dataset load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("load_csv: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), options);
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.n == 0) throw InvalidInputError("synth_dataset: n must be >= 1");
  if (spec.classes < 2) throw InvalidInputError("synth_dataset: need at least 2 classes");
  if (spec.image_side == 0) throw InvalidInputError("synth_dataset: image_side must be > 0");
  constexpr double kPi = 3.141592653589793;
  Rng rng(spec.seed);
  const std::size_t side = spec.image_side;
  Dataset out;
  out.num_classes = spec.classes;
  out.features = Matrix<float>(spec.n, side * side);
  out.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t label = i % spec.classes;
    out.labels[i] = label;
    const double theta = kPi * static_cast<double>(label) / static_cast<double>(spec.classes);
    const double cycles = (label % 2 == 0) ? 2.0 : 3.0;
    const double freq = 2.0 * kPi * cycles / static_cast<double>(side);
    const double phase = 2.0 * kPi * uniform01(rng);
    const double contrast = 0.35 + 0.15 * uniform01(rng);
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    auto row = out.features.row(i);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double u = cs * static_cast<double>(x) + sn * static_cast<double>(y);
        double v = 0.5 + contrast * std::sin(freq * u + phase);
        if (spec.noise > 0.0) v += spec.noise * standard_normal(rng);
        row[y * side + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  // Interleave classes randomly so prefixes are not class-ordered.
  std::vector<std::size_t> order(spec.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = spec.n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return out.subset(order);
}

std::vector<Dataset> split_dataset(const Dataset& data, std::span<const std::size_t> sizes,
                                   std::uint64_t seed) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total > data.size()) {
    throw InvalidInputError("split_dataset: requested " + std::to_string(total) + " rows of " +
                            std::to_string(data.size()));
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  std::vector<Dataset> out;
  std::size_t offset = 0;
  for (const std::size_t n : sizes) {
    out.push_back(data.subset(std::span<const std::size_t>(order).subspan(offset, n)));
    offset += n;
  }
  return out;
}

}  // namespace nmsearch
