#include "nmsearch/optimizer.hpp"

#include <cmath>

#include "nmsearch/errors.hpp"

namespace nmsearch {

OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer \"" + text + "\" (expected sgd or adamw)");
}

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adamw"; }

Optimizer::Optimizer(const ArchSpec& arch, OptimizerConfig config)
    : config_(config), m_(VitParams<float>::zeros(arch)), v_(VitParams<float>::zeros(arch)) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  // zeros() sets layer-norm scales to 1; moments must start at 0.
  m_.for_each([](const std::string&, Matrix<float>& t) { t.fill(0.0f); });
  v_.for_each([](const std::string&, Matrix<float>& t) { t.fill(0.0f); });
}

namespace {

bool is_decayed(const std::string& name) {
  return name.ends_with("_w");
}

}  // namespace

void Optimizer::step(VitParams<float>& params, const VitParams<float>& grads,
                     const std::vector<MaskTensor>* prunable_masks) {
  ++steps_;
  std::vector<Matrix<float>*> p_list, m_list, v_list;
  std::vector<const Matrix<float>*> g_list;
  std::vector<std::string> names;
  params.for_each([&](const std::string& n, Matrix<float>& t) {
    p_list.push_back(&t);
    names.push_back(n);
  });
  grads.for_each([&](const std::string&, const Matrix<float>& t) { g_list.push_back(&t); });
  m_.for_each([&](const std::string&, Matrix<float>& t) { m_list.push_back(&t); });
  v_.for_each([&](const std::string&, Matrix<float>& t) { v_list.push_back(&t); });

  // Map prunable weight tensors to their masks.
  std::vector<const MaskTensor*> mask_of(p_list.size(), nullptr);
  if (prunable_masks) {
    if (prunable_masks->size() != 4 * params.blocks.size()) {
      throw ShapeError("optimizer: expected one mask per prunable module");
    }
    for (std::size_t l = 0; l < prunable_masks->size(); ++l) {
      const Matrix<float>* target = &params.prunable(l);
      for (std::size_t i = 0; i < p_list.size(); ++i) {
        if (p_list[i] == target) mask_of[i] = &(*prunable_masks)[l];
      }
    }
  }

  const float lr = static_cast<float>(config_.learning_rate);
  const float wd = static_cast<float>(config_.weight_decay);
  const float b1 = static_cast<float>(config_.beta1);
  const float b2 = static_cast<float>(config_.beta2);
  const float eps = static_cast<float>(config_.eps);
  const float bc1 = 1.0f - static_cast<float>(std::pow(config_.beta1, static_cast<double>(steps_)));
  const float bc2 = 1.0f - static_cast<float>(std::pow(config_.beta2, static_cast<double>(steps_)));

  for (std::size_t i = 0; i < p_list.size(); ++i) {
    Matrix<float>& p = *p_list[i];
    const Matrix<float>& g = *g_list[i];
    Matrix<float>& m = *m_list[i];
    Matrix<float>& v = *v_list[i];
    const MaskTensor* mask = mask_of[i];
    const bool decay = is_decayed(names[i]) && wd > 0.0f;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (mask && !mask->bits[k]) continue;
      if (config_.kind == OptimizerKind::sgd) {
        if (decay) p[k] -= lr * wd * p[k];
        p[k] -= lr * g[k];
      } else {
        m[k] = b1 * m[k] + (1.0f - b1) * g[k];
        v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
        const float mhat = m[k] / bc1;
        const float vhat = v[k] / bc2;
        if (decay) p[k] -= lr * wd * p[k];
        p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
}

}  // namespace nmsearch
