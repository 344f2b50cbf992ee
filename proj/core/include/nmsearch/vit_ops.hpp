#pragma once

// Forward/backward primitives of the micro-ViT. Every backward accumulates
// into its gradient outputs (+=) so callers can sum over a batch.

#include <cstddef>
#include <span>
#include <vector>

#include "nmsearch/matrix.hpp"

namespace nmsearch::ops {

template <typename T>
T dot(const T* a, const T* b, std::size_t n);

// Y = X W^T + b. X: tokens x in, W: out x in, b: 1 x out.
template <typename T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b);
template <typename T>
void linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>* dx,
                     Matrix<T>& dw, Matrix<T>& db);

template <typename T>
struct LayerNormCache {
  Matrix<T> xhat;
  std::vector<T> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
Matrix<T> layernorm_forward(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                            LayerNormCache<T>& cache);
template <typename T>
void layernorm_backward(const LayerNormCache<T>& cache, const Matrix<T>& gamma, const Matrix<T>& dy,
                        Matrix<T>& dx, Matrix<T>& dgamma, Matrix<T>& dbeta);

// tanh approximation
template <typename T>
Matrix<T> gelu_forward(const Matrix<T>& x);
template <typename T>
void gelu_backward(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>& dx);

// Multi-head self-attention core on a packed qkv (tokens x 3D) matrix.
// Returns the concatenated head outputs (tokens x D); `probs` receives the
// per-head softmax weights (heads x tokens x tokens, flattened).
template <typename T>
Matrix<T> attention_forward(const Matrix<T>& qkv, std::size_t heads, std::vector<T>& probs);
template <typename T>
void attention_backward(const Matrix<T>& qkv, std::size_t heads, const std::vector<T>& probs,
                        const Matrix<T>& dout, Matrix<T>& dqkv);

template <typename T>
std::vector<T> softmax(std::span<const T> logits, T temperature = T{1});

// Cross entropy against a hard label. Writes dL/dlogits into `dlogits`.
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t label, std::span<T> dlogits);

// -sum p_teacher * log softmax(logits / temperature), with p_teacher =
// softmax(teacher_logits / temperature).
template <typename T>
T soft_cross_entropy(std::span<const T> logits, std::span<const T> teacher_logits, T temperature,
                     std::span<T> dlogits);

}  // namespace nmsearch::ops
