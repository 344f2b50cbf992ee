#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nmsearch/arch.hpp"
#include "nmsearch/matrix.hpp"
#include "nmsearch/vit_ops.hpp"

namespace nmsearch {

template <typename T>
struct BlockParams {
  Matrix<T> ln1_gamma, ln1_beta;
  Matrix<T> qkv_w, qkv_b;
  Matrix<T> proj_w, proj_b;
  Matrix<T> ln2_gamma, ln2_beta;
  Matrix<T> fc1_w, fc1_b;
  Matrix<T> fc2_w, fc2_b;
};

// Parameters of the micro-ViT. Linear weights are (out x in).
template <typename T>
struct VitParams {
  Matrix<T> patch_w, patch_b, pos;
  std::vector<BlockParams<T>> blocks;
  Matrix<T> norm_gamma, norm_beta;
  Matrix<T> head_w, head_b;

  // All-zero tensors with the right shapes (layer-norm scales included).
  static VitParams zeros(const ArchSpec& arch);
  // Linear weights ~ N(0, 1/fan_in), position table ~ N(0, 0.02^2),
  // layer-norm scales 1, biases 0.
  static VitParams init(const ArchSpec& arch, std::uint64_t seed);

  Matrix<T>& prunable(std::size_t module);
  const Matrix<T>& prunable(std::size_t module) const;

  // Visits every tensor in a fixed order with a stable name.
  void for_each(const std::function<void(const std::string&, Matrix<T>&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix<T>&)>& fn) const;

  std::size_t parameter_count() const;
};

template <typename To, typename From>
VitParams<To> params_cast(const VitParams<From>& p);

template <typename T>
struct BlockCache {
  Matrix<T> x_in;
  ops::LayerNormCache<T> ln1;
  Matrix<T> a, qkv;
  std::vector<T> probs;
  Matrix<T> attn_out, x_mid;
  ops::LayerNormCache<T> ln2;
  Matrix<T> c, f, g;
};

template <typename T>
struct ForwardCache {
  Matrix<T> patches;
  std::vector<BlockCache<T>> blocks;
  Matrix<T> x_final;
  ops::LayerNormCache<T> norm;
  Matrix<T> normed, pooled;
};

// Splits one flattened image (channels x side x side, row-major) into
// tokens x patch_dim patches.
template <typename T>
Matrix<T> extract_patches(const ArchSpec& arch, std::span<const T> image);

// Logits (1 x classes) for a single image. `cache` may be null.
template <typename T>
Matrix<T> vit_forward(const ArchSpec& arch, const VitParams<T>& params, std::span<const T> image,
                      ForwardCache<T>* cache);

// Accumulates parameter gradients for one sample into `grads`.
template <typename T>
void vit_backward(const ArchSpec& arch, const VitParams<T>& params, const ForwardCache<T>& cache,
                  std::span<const T> dlogits, VitParams<T>& grads);

}  // namespace nmsearch
