#include "nmsearch/vit.hpp"

#include <cmath>

#include "nmsearch/errors.hpp"
#include "nmsearch/rng.hpp"

namespace nmsearch {

template <typename T>
VitParams<T> VitParams<T>::zeros(const ArchSpec& arch) {
  arch.validate();
  if (arch.kind != ArchKind::vit) throw ConfigError("model parameters require a vit arch");
  const std::size_t d = arch.embed_dim;
  const std::size_t h = arch.hidden_dim();
  VitParams p;
  p.patch_w = Matrix<T>(d, arch.patch_dim());
  p.patch_b = Matrix<T>(1, d);
  p.pos = Matrix<T>(arch.tokens(), d);
  p.blocks.resize(arch.blocks);
  for (auto& b : p.blocks) {
    b.ln1_gamma = Matrix<T>(1, d, T{1});
    b.ln1_beta = Matrix<T>(1, d);
    b.qkv_w = Matrix<T>(3 * d, d);
    b.qkv_b = Matrix<T>(1, 3 * d);
    b.proj_w = Matrix<T>(d, d);
    b.proj_b = Matrix<T>(1, d);
    b.ln2_gamma = Matrix<T>(1, d, T{1});
    b.ln2_beta = Matrix<T>(1, d);
    b.fc1_w = Matrix<T>(h, d);
    b.fc1_b = Matrix<T>(1, h);
    b.fc2_w = Matrix<T>(d, h);
    b.fc2_b = Matrix<T>(1, d);
  }
  p.norm_gamma = Matrix<T>(1, d, T{1});
  p.norm_beta = Matrix<T>(1, d);
  p.head_w = Matrix<T>(arch.num_classes, d);
  p.head_b = Matrix<T>(1, arch.num_classes);
  return p;
}

template <typename T>
VitParams<T> VitParams<T>::init(const ArchSpec& arch, std::uint64_t seed) {
  VitParams p = zeros(arch);
  Rng rng(seed);
  auto fill = [&](Matrix<T>& m, double stddev) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(standard_normal(rng) * stddev);
  };
  auto fan_in = [&](Matrix<T>& w) { fill(w, 1.0 / std::sqrt(static_cast<double>(w.cols()))); };
  fan_in(p.patch_w);
  fill(p.pos, 0.02);
  for (auto& b : p.blocks) {
    fan_in(b.qkv_w);
    fan_in(b.proj_w);
    fan_in(b.fc1_w);
    fan_in(b.fc2_w);
  }
  fan_in(p.head_w);
  return p;
}

template <typename T>
Matrix<T>& VitParams<T>::prunable(std::size_t module) {
  return const_cast<Matrix<T>&>(std::as_const(*this).prunable(module));
}

template <typename T>
const Matrix<T>& VitParams<T>::prunable(std::size_t module) const {
  if (module >= 4 * blocks.size()) {
    throw ShapeError("prunable module index " + std::to_string(module) + " out of range");
  }
  const auto& b = blocks[module / 4];
  switch (module % 4) {
    case 0: return b.qkv_w;
    case 1: return b.proj_w;
    case 2: return b.fc1_w;
    default: return b.fc2_w;
  }
}

template <typename T>
void VitParams<T>::for_each(const std::function<void(const std::string&, Matrix<T>&)>& fn) {
  fn("patch_w", patch_w);
  fn("patch_b", patch_b);
  fn("pos", pos);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    fn(pre + "ln1_gamma", b.ln1_gamma);
    fn(pre + "ln1_beta", b.ln1_beta);
    fn(pre + "qkv_w", b.qkv_w);
    fn(pre + "qkv_b", b.qkv_b);
    fn(pre + "proj_w", b.proj_w);
    fn(pre + "proj_b", b.proj_b);
    fn(pre + "ln2_gamma", b.ln2_gamma);
    fn(pre + "ln2_beta", b.ln2_beta);
    fn(pre + "fc1_w", b.fc1_w);
    fn(pre + "fc1_b", b.fc1_b);
    fn(pre + "fc2_w", b.fc2_w);
    fn(pre + "fc2_b", b.fc2_b);
  }
  fn("norm_gamma", norm_gamma);
  fn("norm_beta", norm_beta);
  fn("head_w", head_w);
  fn("head_b", head_b);
}

template <typename T>
void VitParams<T>::for_each(
    const std::function<void(const std::string&, const Matrix<T>&)>& fn) const {
  const_cast<VitParams*>(this)->for_each(
      [&](const std::string& name, Matrix<T>& m) { fn(name, m); });
}

template <typename T>
std::size_t VitParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix<T>& m) { n += m.size(); });
  return n;
}

template <typename To, typename From>
VitParams<To> params_cast(const VitParams<From>& p) {
  VitParams<To> out;
  out.patch_w = matrix_cast<To>(p.patch_w);
  out.patch_b = matrix_cast<To>(p.patch_b);
  out.pos = matrix_cast<To>(p.pos);
  out.blocks.resize(p.blocks.size());
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& s = p.blocks[i];
    auto& d = out.blocks[i];
    d.ln1_gamma = matrix_cast<To>(s.ln1_gamma);
    d.ln1_beta = matrix_cast<To>(s.ln1_beta);
    d.qkv_w = matrix_cast<To>(s.qkv_w);
    d.qkv_b = matrix_cast<To>(s.qkv_b);
    d.proj_w = matrix_cast<To>(s.proj_w);
    d.proj_b = matrix_cast<To>(s.proj_b);
    d.ln2_gamma = matrix_cast<To>(s.ln2_gamma);
    d.ln2_beta = matrix_cast<To>(s.ln2_beta);
    d.fc1_w = matrix_cast<To>(s.fc1_w);
    d.fc1_b = matrix_cast<To>(s.fc1_b);
    d.fc2_w = matrix_cast<To>(s.fc2_w);
    d.fc2_b = matrix_cast<To>(s.fc2_b);
  }
  out.norm_gamma = matrix_cast<To>(p.norm_gamma);
  out.norm_beta = matrix_cast<To>(p.norm_beta);
  out.head_w = matrix_cast<To>(p.head_w);
  out.head_b = matrix_cast<To>(p.head_b);
  return out;
}

template <typename T>
Matrix<T> extract_patches(const ArchSpec& arch, std::span<const T> image) {
  if (image.size() != arch.input_size()) {
    throw ShapeError("image has " + std::to_string(image.size()) + " values, expected " +
                     std::to_string(arch.input_size()));
  }
  const std::size_t side = arch.image_side;
  const std::size_t ps = arch.patch_side;
  const std::size_t per_side = side / ps;
  Matrix<T> patches(arch.tokens(), arch.patch_dim());
  for (std::size_t py = 0; py < per_side; ++py) {
    for (std::size_t px = 0; px < per_side; ++px) {
      T* dst = patches.row(py * per_side + px).data();
      std::size_t k = 0;
      for (std::size_t c = 0; c < arch.channels; ++c) {
        for (std::size_t y = 0; y < ps; ++y) {
          for (std::size_t x = 0; x < ps; ++x) {
            dst[k++] = image[c * side * side + (py * ps + y) * side + (px * ps + x)];
          }
        }
      }
    }
  }
  return patches;
}

template <typename T>
Matrix<T> vit_forward(const ArchSpec& arch, const VitParams<T>& params, std::span<const T> image,
                      ForwardCache<T>* cache) {
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.patches = extract_patches<T>(arch, image);
  Matrix<T> x = ops::linear_forward(c.patches, params.patch_w, params.patch_b);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += params.pos[i];

  c.blocks.resize(params.blocks.size());
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& p = params.blocks[b];
    auto& bc = c.blocks[b];
    bc.x_in = x;
    bc.a = ops::layernorm_forward(x, p.ln1_gamma, p.ln1_beta, bc.ln1);
    bc.qkv = ops::linear_forward(bc.a, p.qkv_w, p.qkv_b);
    bc.attn_out = ops::attention_forward(bc.qkv, arch.num_heads, bc.probs);
    const Matrix<T> y = ops::linear_forward(bc.attn_out, p.proj_w, p.proj_b);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
    bc.x_mid = x;
    bc.c = ops::layernorm_forward(x, p.ln2_gamma, p.ln2_beta, bc.ln2);
    bc.f = ops::linear_forward(bc.c, p.fc1_w, p.fc1_b);
    bc.g = ops::gelu_forward(bc.f);
    const Matrix<T> z = ops::linear_forward(bc.g, p.fc2_w, p.fc2_b);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += z[i];
  }
  c.x_final = x;
  c.normed = ops::layernorm_forward(x, params.norm_gamma, params.norm_beta, c.norm);
  c.pooled = Matrix<T>(1, arch.embed_dim);
  const T inv_tokens = T{1} / static_cast<T>(c.normed.rows());
  for (std::size_t t = 0; t < c.normed.rows(); ++t) {
    for (std::size_t j = 0; j < arch.embed_dim; ++j) c.pooled[j] += c.normed(t, j) * inv_tokens;
  }
  return ops::linear_forward(c.pooled, params.head_w, params.head_b);
}

template <typename T>
void vit_backward(const ArchSpec& arch, const VitParams<T>& params, const ForwardCache<T>& c,
                  std::span<const T> dlogits, VitParams<T>& grads) {
  const std::size_t d = arch.embed_dim;
  const std::size_t tokens = c.normed.rows();
  Matrix<T> dlog(1, dlogits.size(), std::vector<T>(dlogits.begin(), dlogits.end()));
  Matrix<T> dpooled(1, d);
  ops::linear_backward(c.pooled, params.head_w, dlog, &dpooled, grads.head_w, grads.head_b);

  Matrix<T> dnormed(tokens, d);
  const T inv_tokens = T{1} / static_cast<T>(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t j = 0; j < d; ++j) dnormed(t, j) = dpooled[j] * inv_tokens;
  }
  Matrix<T> dx(tokens, d);
  ops::layernorm_backward(c.norm, params.norm_gamma, dnormed, dx, grads.norm_gamma,
                          grads.norm_beta);

  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    const auto& p = params.blocks[b];
    auto& g = grads.blocks[b];
    const auto& bc = c.blocks[b];

    // MLP branch: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
    Matrix<T> dg(tokens, p.fc2_w.cols());
    ops::linear_backward(bc.g, p.fc2_w, dx, &dg, g.fc2_w, g.fc2_b);
    Matrix<T> df(tokens, p.fc1_w.rows());
    ops::gelu_backward(bc.f, dg, df);
    Matrix<T> dc(tokens, d);
    ops::linear_backward(bc.c, p.fc1_w, df, &dc, g.fc1_w, g.fc1_b);
    ops::layernorm_backward(bc.ln2, p.ln2_gamma, dc, dx, g.ln2_gamma, g.ln2_beta);

    // Attention branch: x_mid = x_in + proj(attn(qkv(ln1(x_in))))
    Matrix<T> dattn(tokens, d);
    ops::linear_backward(bc.attn_out, p.proj_w, dx, &dattn, g.proj_w, g.proj_b);
    Matrix<T> dqkv(tokens, 3 * d);
    ops::attention_backward(bc.qkv, arch.num_heads, bc.probs, dattn, dqkv);
    Matrix<T> da(tokens, d);
    ops::linear_backward(bc.a, p.qkv_w, dqkv, &da, g.qkv_w, g.qkv_b);
    ops::layernorm_backward(bc.ln1, p.ln1_gamma, da, dx, g.ln1_gamma, g.ln1_beta);
  }

  for (std::size_t i = 0; i < dx.size(); ++i) grads.pos[i] += dx[i];
  ops::linear_backward<T>(c.patches, params.patch_w, dx, nullptr, grads.patch_w, grads.patch_b);
}

template struct VitParams<float>;
template struct VitParams<double>;
template VitParams<double> params_cast<double, float>(const VitParams<float>&);
template VitParams<float> params_cast<float, double>(const VitParams<double>&);
template VitParams<float> params_cast<float, float>(const VitParams<float>&);
template VitParams<double> params_cast<double, double>(const VitParams<double>&);

#define NMSEARCH_INSTANTIATE_VIT(T)                                                              \
  template Matrix<T> extract_patches<T>(const ArchSpec&, std::span<const T>);                    \
  template Matrix<T> vit_forward<T>(const ArchSpec&, const VitParams<T>&, std::span<const T>,    \
                                    ForwardCache<T>*);                                           \
  template void vit_backward<T>(const ArchSpec&, const VitParams<T>&, const ForwardCache<T>&,    \
                                std::span<const T>, VitParams<T>&);

NMSEARCH_INSTANTIATE_VIT(float)
NMSEARCH_INSTANTIATE_VIT(double)

#undef NMSEARCH_INSTANTIATE_VIT

}  // namespace nmsearch
