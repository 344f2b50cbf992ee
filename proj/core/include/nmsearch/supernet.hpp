#pragma once

// Weight-sharing N:M supernet over the micro-ViT.
//
// Each prunable module keeps one shared weight matrix. A configuration
// selects a level per module; the module then computes with the shared
// matrix masked to that level, the mask being recomputed from the current
// weights on every forward. Gradients flow only into kept positions.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nmsearch/choice_filter.hpp"
#include "nmsearch/cost_model.hpp"
#include "nmsearch/dataset.hpp"
#include "nmsearch/nm.hpp"
#include "nmsearch/optimizer.hpp"
#include "nmsearch/rng.hpp"
#include "nmsearch/sampling.hpp"
#include "nmsearch/search_space.hpp"
#include "nmsearch/vit.hpp"

namespace nmsearch {

struct DenseModel {
  ArchSpec arch;
  VitParams<float> params;
};

// Logits (n x classes) of a dense model.
Matrix<float> model_forward(const ArchSpec& arch, const VitParams<float>& params,
                            const Matrix<float>& inputs, std::size_t threads = 1);
double model_accuracy(const ArchSpec& arch, const VitParams<float>& params, const Dataset& data,
                      std::size_t threads = 1);

struct LossConfig {
  bool distillation = false;
  double temperature = 1.0;
  double distill_weight = 0.5;  // share of the teacher-soft term
};

// Mean loss over `batch` of the subnet given by `masks` (one per prunable
// module) over `shared`. When `grads` is non-null it is overwritten with
// d(loss)/d(shared); prunable-weight gradients are zero outside the masks.
// `teacher_logits` (batch x classes) is required when distillation is on.
template <typename T>
T subnet_loss(const ArchSpec& arch, const VitParams<T>& shared, const std::vector<MaskTensor>& masks,
              const Dataset& batch, const Matrix<T>* teacher_logits, const LossConfig& loss,
              VitParams<T>* grads);

// Throws ConfigError unless `config` has one supported level per module.
// The FLOPs cap is not checked: every configuration of the space, including
// the dense one, can be run.
void check_runnable(const SearchSpace& space, const SparseConfig& config);

class Supernet {
 public:
  // Copies the pretrained dense weights into the shared matrices.
  static Supernet from_pretrained(const SearchSpace& space, const DenseModel& pretrained);

  const SearchSpace& space() const { return space_; }
  const ArchSpec& arch() const { return space_.arch; }
  const VitParams<float>& weights() const { return weights_; }
  VitParams<float>& weights() { return weights_; }

  std::vector<MaskTensor> masks(const SparseConfig& config) const;
  VitParams<float> masked_weights(const SparseConfig& config) const;

 private:
  SearchSpace space_;
  VitParams<float> weights_;
};

Matrix<float> forward(const Supernet& net, const SparseConfig& config, const Matrix<float>& inputs,
                      std::size_t threads = 1);

// Top-1 accuracy of the subnet. Throws InvalidInputError on an empty set.
double evaluate(const Supernet& net, const SparseConfig& config, const Dataset& data,
                std::size_t threads = 1);

struct TrainConfig {
  std::size_t iterations = 200;          // T
  std::size_t batch_size = 32;
  std::size_t filter_frequency = 50;     // f_acf; filtering runs when t % f_acf == 0
  bool filtering = true;
  SamplingMode sampling = SamplingMode::two_step;
  std::size_t max_retries = 200;
  LossConfig loss{true, 1.0, 0.5};
  OptimizerConfig optimizer{};
  std::uint64_t seed = 0;

  void validate() const;
};

// One gradient step of the subnet `config` on `batch`. Only kept positions
// of the shared prunable weights change. Throws TrainingError on a
// non-finite loss.
double train_step(Supernet& net, const SparseConfig& config, const Dataset& batch,
                  const DenseModel* teacher, const LossConfig& loss, Optimizer& optimizer);

struct TrainStepRecord {
  std::size_t iteration = 0;
  SparseConfig config;
  std::optional<std::size_t> interval;
  double loss = 0.0;
  SampleOutcome outcome = SampleOutcome::direct;
};

struct FilterEvent {
  std::size_t iteration = 0;
  FilterReport report;
};

struct TrainingLog {
  std::vector<TrainStepRecord> steps;
  std::vector<FilterEvent> filters;
  ChoiceProbabilityTable final_table;
  std::size_t fallback_count = 0;

  // iteration,config,interval,loss,outcome
  std::string to_csv() const;
};

struct TrainContext {
  CostIntervals intervals;
  FilterConfig filter;
  const Dataset* proxy = nullptr;    // required when filtering is on
  const DenseModel* teacher = nullptr;  // required when distillation is on
  std::size_t threads = 1;
};

// Sparse supernet training: every f_acf iterations update the choice table
// from proxy accuracies, then sample a configuration, take a batch and do
// one distillation step on that subnet.
TrainingLog train(Supernet& net, const Dataset& data, const TrainConfig& config,
                  const TrainContext& context);

// Trains a dense model (all modules at M:M, no masking) with plain
// cross-entropy; used for the teacher and for fine-tuning baselines.
struct DenseTrainConfig {
  std::size_t iterations = 300;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer{};
  std::uint64_t seed = 0;
};
std::vector<double> train_dense(DenseModel& model, const Dataset& data,
                                const DenseTrainConfig& config);

// Trains a fixed subnet of a supernet for `config.iterations` steps.
std::vector<double> train_fixed_subnet(Supernet& net, const SparseConfig& subnet, const Dataset& data,
                                       const DenseTrainConfig& config, const DenseModel* teacher,
                                       const LossConfig& loss);

// A standalone sparse model: prunable modules stored in the packed N:M
// format, everything else dense.
struct SparseModel {
  ArchSpec arch;
  SparseConfig config;
  std::vector<SparseEncoding> modules;
  VitParams<float> dense_params;  // prunable weights zeroed

  VitParams<float> materialize() const;
  Matrix<float> forward(const Matrix<float>& inputs, std::size_t threads = 1) const;
};

SparseModel extract_subnet(const Supernet& net, const SparseConfig& config);

}  // namespace nmsearch
