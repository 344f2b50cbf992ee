#include "nmsearch/nm.hpp"

#include <bit>
#include <charconv>
#include <cstring>

namespace nmsearch {

SparsityLevel SparsityLevel::make(std::uint32_t n, std::uint32_t m) {
  if (m == 0 || !std::has_single_bit(m)) {
    throw InvalidInputError("sparsity level: M=" + std::to_string(m) + " is not a power of two");
  }
  if (n < 1 || n > m) {
    throw InvalidInputError("sparsity level: need 1 <= N <= M, got " + std::to_string(n) + ":" +
                            std::to_string(m));
  }
  return SparsityLevel{n, m};
}

SparsityLevel SparsityLevel::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw InvalidInputError("sparsity level: expected \"N:M\", got \"" + std::string(text) + "\"");
  }
  auto parse_u32 = [&](std::string_view part) {
    std::uint32_t v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size() || part.empty()) {
      throw InvalidInputError("sparsity level: bad number in \"" + std::string(text) + "\"");
    }
    return v;
  };
  return make(parse_u32(text.substr(0, colon)), parse_u32(text.substr(colon + 1)));
}

std::string SparsityLevel::to_string() const {
  return std::to_string(n) + ":" + std::to_string(m);
}

unsigned SparsityLevel::index_bits() const noexcept {
  return m <= 1 ? 0u : static_cast<unsigned>(std::countr_zero(m));
}

std::size_t MaskTensor::count() const {
  std::size_t c = 0;
  for (auto b : bits) c += b ? 1 : 0;
  return c;
}

void check_groupable(std::size_t cols, SparsityLevel level) {
  if (level.m == 0 || cols % level.m != 0) {
    throw ConfigError("reduction axis of length " + std::to_string(cols) +
                      " is not divisible by M=" + std::to_string(level.m));
  }
}

bool is_subset(const MaskTensor& sparser, const MaskTensor& denser) {
  if (sparser.rows != denser.rows || sparser.cols != denser.cols) {
    throw ShapeError("is_subset: mask shapes differ");
  }
  for (std::size_t i = 0; i < sparser.bits.size(); ++i) {
    if (sparser.bits[i] && !denser.bits[i]) return false;
  }
  return true;
}

SparseEncoding encode_sparse(const Matrix<float>& weights, SparsityLevel level,
                             SaliencyMetric metric) {
  const MaskTensor mask = layer_mask(weights, level, metric);
  SparseEncoding enc;
  enc.level = level;
  enc.rows = weights.rows();
  enc.cols = weights.cols();
  const std::size_t kept = weights.size() / level.m * level.n;
  enc.values.reserve(kept);
  enc.indices.reserve(kept);
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    for (std::size_t g = 0; g < weights.cols(); g += level.m) {
      for (std::size_t k = 0; k < level.m; ++k) {
        if (mask(r, g + k)) {
          enc.values.push_back(weights(r, g + k));
          enc.indices.push_back(static_cast<std::uint32_t>(k));
        }
      }
    }
  }
  return enc;
}

Matrix<float> decode_sparse(const SparseEncoding& enc) {
  const SparsityLevel level = SparsityLevel::make(enc.level.n, enc.level.m);
  check_groupable(enc.cols, level);
  const std::size_t groups = enc.rows * enc.cols / level.m;
  const std::size_t expected = groups * level.n;
  if (enc.values.size() != expected || enc.indices.size() != expected) {
    throw DecodeError("decode_sparse: expected " + std::to_string(expected) +
                      " values and indices, got " + std::to_string(enc.values.size()) + " and " +
                      std::to_string(enc.indices.size()));
  }
  Matrix<float> out(enc.rows, enc.cols, 0.0f);
  std::size_t k = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * level.m;
    std::int64_t prev = -1;
    for (std::uint32_t j = 0; j < level.n; ++j, ++k) {
      const std::uint32_t idx = enc.indices[k];
      if (idx >= level.m) {
        throw DecodeError("decode_sparse: index " + std::to_string(idx) + " in group " +
                          std::to_string(g) + " is >= M=" + std::to_string(level.m));
      }
      if (static_cast<std::int64_t>(idx) <= prev) {
        throw DecodeError("decode_sparse: indices of group " + std::to_string(g) +
                          " are not strictly increasing");
      }
      prev = idx;
      out[base + idx] = enc.values[k];
    }
  }
  return out;
}

std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> indices, unsigned bits) {
  std::vector<std::uint8_t> out((indices.size() * bits + 7) / 8, 0);
  std::size_t bit = 0;
  for (const std::uint32_t idx : indices) {
    for (unsigned b = 0; b < bits; ++b, ++bit) {
      if ((idx >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return out;
}

std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> packed, std::size_t count,
                                          unsigned bits) {
  if (packed.size() * 8 < count * bits) {
    throw DecodeError("unpack_indices: packed stream too short");
  }
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    for (unsigned b = 0; b < bits; ++b, ++bit) {
      if ((packed[bit / 8] >> (bit % 8)) & 1u) out[i] |= (1u << b);
    }
  }
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_encoding(const SparseEncoding& enc) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + enc.values.size() * 4 + enc.indices.size());
  put_u32(out, static_cast<std::uint32_t>(enc.rows));
  put_u32(out, static_cast<std::uint32_t>(enc.cols));
  put_u32(out, enc.level.n);
  put_u32(out, enc.level.m);
  for (const float v : enc.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  const auto packed = pack_indices(enc.indices, enc.level.index_bits());
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

SparseEncoding deserialize_encoding(std::span<const std::uint8_t> blob) {
  if (blob.size() < 16) throw DecodeError("encoding blob shorter than its 16-byte header");
  SparseEncoding enc;
  enc.rows = get_u32(blob, 0);
  enc.cols = get_u32(blob, 4);
  try {
    enc.level = SparsityLevel::make(get_u32(blob, 8), get_u32(blob, 12));
  } catch (const InvalidInputError& e) {
    throw DecodeError(std::string("encoding blob header: ") + e.what());
  }
  if (enc.cols % enc.level.m != 0) {
    throw DecodeError("encoding blob header: cols not divisible by M");
  }
  const std::size_t kept = enc.rows * enc.cols / enc.level.m * enc.level.n;
  const unsigned bits = enc.level.index_bits();
  const std::size_t packed_bytes = (kept * bits + 7) / 8;
  const std::size_t expected = 16 + kept * 4 + packed_bytes;
  if (blob.size() != expected) {
    throw DecodeError("encoding blob is " + std::to_string(blob.size()) + " bytes, expected " +
                      std::to_string(expected));
  }
  enc.values.resize(kept);
  for (std::size_t i = 0; i < kept; ++i) {
    enc.values[i] = std::bit_cast<float>(get_u32(blob, 16 + 4 * i));
  }
  enc.indices = unpack_indices(blob.subspan(16 + kept * 4), kept, bits);
  return enc;
}

}  // namespace nmsearch
