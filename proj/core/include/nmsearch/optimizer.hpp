#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nmsearch/nm.hpp"
#include "nmsearch/vit.hpp"

namespace nmsearch {

enum class OptimizerKind { sgd, adamw };

OptimizerKind parse_optimizer_kind(const std::string& text);
const char* to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double learning_rate = 1e-3;
  double weight_decay = 0.005;  // decoupled; applied to linear weights only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// SGD or AdamW over VitParams<float>. When `prunable_masks` is given (one
// mask per prunable module), positions outside the mask are left untouched
// by the step: no gradient, no decay, no moment-driven drift.
class Optimizer {
 public:
  Optimizer(const ArchSpec& arch, OptimizerConfig config);

  void step(VitParams<float>& params, const VitParams<float>& grads,
            const std::vector<MaskTensor>* prunable_masks = nullptr);

  const OptimizerConfig& config() const { return config_; }
  std::size_t steps() const { return steps_; }

 private:
  OptimizerConfig config_;
  VitParams<float> m_;
  VitParams<float> v_;
  std::size_t steps_ = 0;
};

}  // namespace nmsearch
