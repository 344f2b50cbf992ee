#include "nmsearch/vit_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nmsearch::ops {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T s0{}, s1{}, s2{}, s3{};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

namespace {

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <typename T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  if (x.cols() != w.cols() || b.size() != w.rows()) {
    throw ShapeError("linear_forward: shape mismatch");
  }
  Matrix<T> y(x.rows(), w.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const T* xr = x.row(t).data();
    T* yr = y.row(t).data();
    for (std::size_t o = 0; o < w.rows(); ++o) yr[o] = dot(xr, w.row(o).data(), x.cols()) + b[o];
  }
  return y;
}

template <typename T>
void linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>* dx,
                     Matrix<T>& dw, Matrix<T>& db) {
  const std::size_t in = w.cols();
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const T* xr = x.row(t).data();
    const T* dyr = dy.row(t).data();
    T* dxr = dx ? dx->row(t).data() : nullptr;
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const T g = dyr[o];
      if (g == T{0}) continue;
      db[o] += g;
      axpy(g, xr, dw.row(o).data(), in);
      if (dxr) axpy(g, w.row(o).data(), dxr, in);
    }
  }
}

template <typename T>
Matrix<T> layernorm_forward(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                            LayerNormCache<T>& cache) {
  const std::size_t d = x.cols();
  Matrix<T> y(x.rows(), d);
  cache.xhat = Matrix<T>(x.rows(), d);
  cache.rstd.assign(x.rows(), T{});
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xr = x.row(t);
    T mean{};
    for (const T v : xr) mean += v;
    mean /= static_cast<T>(d);
    T var{};
    for (const T v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.rstd[t] = rstd;
    for (std::size_t i = 0; i < d; ++i) {
      const T xh = (xr[i] - mean) * rstd;
      cache.xhat(t, i) = xh;
      y(t, i) = gamma[i] * xh + beta[i];
    }
  }
  return y;
}

template <typename T>
void layernorm_backward(const LayerNormCache<T>& cache, const Matrix<T>& gamma, const Matrix<T>& dy,
                        Matrix<T>& dx, Matrix<T>& dgamma, Matrix<T>& dbeta) {
  const std::size_t d = dy.cols();
  std::vector<T> dxhat(d);
  for (std::size_t t = 0; t < dy.rows(); ++t) {
    T mean_dxhat{};
    T mean_dxhat_xhat{};
    for (std::size_t i = 0; i < d; ++i) {
      const T g = dy(t, i);
      const T xh = cache.xhat(t, i);
      dgamma[i] += g * xh;
      dbeta[i] += g;
      dxhat[i] = g * gamma[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * xh;
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    const T rstd = cache.rstd[t];
    for (std::size_t i = 0; i < d; ++i) {
      dx(t, i) += rstd * (dxhat[i] - mean_dxhat - cache.xhat(t, i) * mean_dxhat_xhat);
    }
  }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

template <typename T>
Matrix<T> gelu_forward(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  const T c = static_cast<T>(kGeluC);
  const T a = static_cast<T>(kGeluA);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    y[i] = T{0.5} * v * (T{1} + std::tanh(c * (v + a * v * v * v)));
  }
  return y;
}

template <typename T>
void gelu_backward(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>& dx) {
  const T c = static_cast<T>(kGeluC);
  const T a = static_cast<T>(kGeluA);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T th = std::tanh(c * (v + a * v * v * v));
    const T d = T{0.5} * (T{1} + th) +
                T{0.5} * v * (T{1} - th * th) * c * (T{1} + T{3} * a * v * v);
    dx[i] += dy[i] * d;
  }
}

template <typename T>
Matrix<T> attention_forward(const Matrix<T>& qkv, std::size_t heads, std::vector<T>& probs) {
  const std::size_t tokens = qkv.rows();
  const std::size_t d = qkv.cols() / 3;
  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  Matrix<T> out(tokens, d);
  probs.assign(heads * tokens * tokens, T{});
  std::vector<T> row(tokens);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t qo = h * dh;
    const std::size_t ko = d + h * dh;
    const std::size_t vo = 2 * d + h * dh;
    for (std::size_t i = 0; i < tokens; ++i) {
      const T* q = qkv.row(i).data() + qo;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < tokens; ++j) {
        row[j] = dot(q, qkv.row(j).data() + ko, dh) * scale;
        mx = std::max(mx, row[j]);
      }
      T sum{};
      for (std::size_t j = 0; j < tokens; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      T* p = probs.data() + (h * tokens + i) * tokens;
      T* o = out.row(i).data() + h * dh;
      for (std::size_t j = 0; j < tokens; ++j) {
        p[j] = row[j] / sum;
        axpy(p[j], qkv.row(j).data() + vo, o, dh);
      }
    }
  }
  return out;
}

template <typename T>
void attention_backward(const Matrix<T>& qkv, std::size_t heads, const std::vector<T>& probs,
                        const Matrix<T>& dout, Matrix<T>& dqkv) {
  const std::size_t tokens = qkv.rows();
  const std::size_t d = qkv.cols() / 3;
  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<T> dp(tokens);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t qo = h * dh;
    const std::size_t ko = d + h * dh;
    const std::size_t vo = 2 * d + h * dh;
    for (std::size_t i = 0; i < tokens; ++i) {
      const T* p = probs.data() + (h * tokens + i) * tokens;
      const T* go = dout.row(i).data() + h * dh;
      T weighted{};
      for (std::size_t j = 0; j < tokens; ++j) {
        dp[j] = dot(go, qkv.row(j).data() + vo, dh);
        weighted += dp[j] * p[j];
        axpy(p[j], go, dqkv.row(j).data() + vo, dh);
      }
      T* dq = dqkv.row(i).data() + qo;
      const T* q = qkv.row(i).data() + qo;
      for (std::size_t j = 0; j < tokens; ++j) {
        const T ds = p[j] * (dp[j] - weighted) * scale;
        if (ds == T{0}) continue;
        axpy(ds, qkv.row(j).data() + ko, dq, dh);
        axpy(ds, q, dqkv.row(j).data() + ko, dh);
      }
    }
  }
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits, T temperature) {
  std::vector<T> out(logits.size());
  T mx = -std::numeric_limits<T>::infinity();
  for (const T v : logits) mx = std::max(mx, v / temperature);
  T sum{};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t label, std::span<T> dlogits) {
  const auto p = softmax<T>(logits, T{1});
  for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] = p[i] - (i == label ? T{1} : T{0});
  T mx = -std::numeric_limits<T>::infinity();
  for (const T v : logits) mx = std::max(mx, v);
  T sum{};
  for (const T v : logits) sum += std::exp(v - mx);
  return std::log(sum) + mx - logits[label];
}

template <typename T>
T soft_cross_entropy(std::span<const T> logits, std::span<const T> teacher_logits, T temperature,
                     std::span<T> dlogits) {
  const auto pt = softmax<T>(teacher_logits, temperature);
  const auto ps = softmax<T>(logits, temperature);
  T mx = -std::numeric_limits<T>::infinity();
  for (const T v : logits) mx = std::max(mx, v / temperature);
  T sum{};
  for (const T v : logits) sum += std::exp(v / temperature - mx);
  const T log_z = std::log(sum) + mx;
  T loss{};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    loss -= pt[i] * (logits[i] / temperature - log_z);
    dlogits[i] = (ps[i] - pt[i]) / temperature;
  }
  return loss;
}

#define NMSEARCH_INSTANTIATE_OPS(T)                                                              \
  template T dot<T>(const T*, const T*, std::size_t);                                            \
  template Matrix<T> linear_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);    \
  template void linear_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,         \
                                   Matrix<T>*, Matrix<T>&, Matrix<T>&);                          \
  template Matrix<T> layernorm_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,  \
                                          LayerNormCache<T>&);                                   \
  template void layernorm_backward<T>(const LayerNormCache<T>&, const Matrix<T>&,                \
                                      const Matrix<T>&, Matrix<T>&, Matrix<T>&, Matrix<T>&);     \
  template Matrix<T> gelu_forward<T>(const Matrix<T>&);                                          \
  template void gelu_backward<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);                \
  template Matrix<T> attention_forward<T>(const Matrix<T>&, std::size_t, std::vector<T>&);       \
  template void attention_backward<T>(const Matrix<T>&, std::size_t, const std::vector<T>&,      \
                                      const Matrix<T>&, Matrix<T>&);                             \
  template std::vector<T> softmax<T>(std::span<const T>, T);                                     \
  template T cross_entropy<T>(std::span<const T>, std::size_t, std::span<T>);                    \
  template T soft_cross_entropy<T>(std::span<const T>, std::span<const T>, T, std::span<T>);

NMSEARCH_INSTANTIATE_OPS(float)
NMSEARCH_INSTANTIATE_OPS(double)

#undef NMSEARCH_INSTANTIATE_OPS

}  // namespace nmsearch::ops
