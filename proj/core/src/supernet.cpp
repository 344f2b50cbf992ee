#include "nmsearch/supernet.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <sstream>

#include "nmsearch/errors.hpp"
#include "nmsearch/parallel.hpp"

namespace nmsearch {

Matrix<float> model_forward(const ArchSpec& arch, const VitParams<float>& params,
                            const Matrix<float>& inputs, std::size_t threads) {
  Matrix<float> logits(inputs.rows(), arch.num_classes);
  parallel_for(inputs.rows(), threads, [&](std::size_t i) {
    const Matrix<float> out = vit_forward<float>(arch, params, inputs.row(i), nullptr);
    std::copy(out.flat().begin(), out.flat().end(), logits.row(i).begin());
  });
  return logits;
}

namespace {

std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double accuracy_of(const Matrix<float>& logits, const Dataset& data) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (argmax(logits.row(i)) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
std::vector<MaskTensor> dense_masks(const VitParams<T>& params) {
  std::vector<MaskTensor> masks;
  for (std::size_t l = 0; l < 4 * params.blocks.size(); ++l) {
    const auto& w = params.prunable(l);
    masks.push_back(MaskTensor{w.rows(), w.cols(), std::vector<std::uint8_t>(w.size(), 1)});
  }
  return masks;
}

// Epoch-shuffled mini-batches.
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
      : data_(data), batch_size_(std::min(batch_size, data.size())), rng_(seed),
        order_(data.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
  }

  Dataset next() {
    std::vector<std::size_t> rows;
    rows.reserve(batch_size_);
    while (rows.size() < batch_size_) {
      if (pos_ == order_.size()) shuffle();
      rows.push_back(order_[pos_++]);
    }
    return data_.subset(rows);
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
    }
    pos_ = 0;
  }

  const Dataset& data_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

double model_accuracy(const ArchSpec& arch, const VitParams<float>& params, const Dataset& data,
                      std::size_t threads) {
  if (data.size() == 0) throw InvalidInputError("evaluate: empty dataset");
  return accuracy_of(model_forward(arch, params, data.features, threads), data);
}

template <typename T>
T subnet_loss(const ArchSpec& arch, const VitParams<T>& shared, const std::vector<MaskTensor>& masks,
              const Dataset& batch, const Matrix<T>* teacher_logits, const LossConfig& loss,
              VitParams<T>* grads) {
  if (batch.size() == 0) throw InvalidInputError("subnet_loss: empty batch");
  if (masks.size() != arch.num_prunable()) throw ShapeError("subnet_loss: one mask per module required");
  if (loss.distillation && !teacher_logits) {
    throw InvalidInputError("subnet_loss: distillation requires teacher logits");
  }
  VitParams<T> masked = shared;
  for (std::size_t l = 0; l < masks.size(); ++l) {
    masked.prunable(l) = apply_mask(shared.prunable(l), masks[l]);
  }
  if (grads) {
    *grads = VitParams<T>::zeros(arch);
    grads->for_each([](const std::string&, Matrix<T>& t) { t.fill(T{0}); });
  }
  const T inv_n = T{1} / static_cast<T>(batch.size());
  const T w_soft = loss.distillation ? static_cast<T>(loss.distill_weight) : T{0};
  const T w_hard = T{1} - w_soft;
  const T temperature = static_cast<T>(loss.temperature);
  T total{};
  std::vector<T> image(batch.dim());
  std::vector<T> d_hard(arch.num_classes), d_soft(arch.num_classes), dlogits(arch.num_classes);
  ForwardCache<T> cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto src = batch.sample(i);
    std::copy(src.begin(), src.end(), image.begin());
    const Matrix<T> logits = vit_forward<T>(arch, masked, image, grads ? &cache : nullptr);
    T l = w_hard * ops::cross_entropy<T>(logits.flat(), batch.labels[i], d_hard);
    if (w_soft > T{0}) {
      l += w_soft * ops::soft_cross_entropy<T>(logits.flat(), teacher_logits->row(i), temperature,
                                               d_soft);
    }
    total += l;
    if (grads) {
      for (std::size_t c = 0; c < dlogits.size(); ++c) {
        dlogits[c] = (w_hard * d_hard[c] + (w_soft > T{0} ? w_soft * d_soft[c] : T{0})) * inv_n;
      }
      vit_backward<T>(arch, masked, cache, dlogits, *grads);
    }
  }
  if (grads) {
    for (std::size_t l = 0; l < masks.size(); ++l) {
      auto& g = grads->prunable(l);
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!masks[l].bits[k]) g[k] = T{0};
      }
    }
  }
  return total * inv_n;
}

template float subnet_loss<float>(const ArchSpec&, const VitParams<float>&,
                                  const std::vector<MaskTensor>&, const Dataset&,
                                  const Matrix<float>*, const LossConfig&, VitParams<float>*);
template double subnet_loss<double>(const ArchSpec&, const VitParams<double>&,
                                    const std::vector<MaskTensor>&, const Dataset&,
                                    const Matrix<double>*, const LossConfig&, VitParams<double>*);

void check_runnable(const SearchSpace& space, const SparseConfig& config) {
  if (config.size() != space.num_layers()) {
    throw ConfigError("configuration has " + std::to_string(config.size()) + " levels, expected " +
                      std::to_string(space.num_layers()));
  }
  for (std::size_t l = 0; l < config.size(); ++l) {
    if (!space.level_index(config[l])) {
      throw ConfigError("layer " + std::to_string(l) + " uses unsupported level " +
                        config[l].to_string());
    }
  }
}

Supernet Supernet::from_pretrained(const SearchSpace& space, const DenseModel& pretrained) {
  if (!(pretrained.arch == space.arch)) {
    throw ShapeError("pretrained model arch does not match the search space arch");
  }
  const VitParams<float> reference = VitParams<float>::zeros(space.arch);
  std::vector<std::pair<std::size_t, std::size_t>> expected;
  reference.for_each([&](const std::string&, const Matrix<float>& m) {
    expected.emplace_back(m.rows(), m.cols());
  });
  std::size_t i = 0;
  bool ok = true;
  pretrained.params.for_each([&](const std::string&, const Matrix<float>& m) {
    if (i >= expected.size() || expected[i] != std::make_pair(m.rows(), m.cols())) ok = false;
    ++i;
  });
  if (!ok || i != expected.size()) throw ShapeError("pretrained parameter shapes do not match arch");
  Supernet net;
  net.space_ = space;
  net.weights_ = pretrained.params;
  return net;
}

std::vector<MaskTensor> Supernet::masks(const SparseConfig& config) const {
  check_runnable(space_, config);
  std::vector<MaskTensor> out;
  out.reserve(config.size());
  for (std::size_t l = 0; l < config.size(); ++l) {
    out.push_back(layer_mask(weights_.prunable(l), config[l]));
  }
  return out;
}

VitParams<float> Supernet::masked_weights(const SparseConfig& config) const {
  const auto m = masks(config);
  VitParams<float> out = weights_;
  for (std::size_t l = 0; l < m.size(); ++l) out.prunable(l) = apply_mask(weights_.prunable(l), m[l]);
  return out;
}

Matrix<float> forward(const Supernet& net, const SparseConfig& config, const Matrix<float>& inputs,
                      std::size_t threads) {
  return model_forward(net.arch(), net.masked_weights(config), inputs, threads);
}

double evaluate(const Supernet& net, const SparseConfig& config, const Dataset& data,
                std::size_t threads) {
  if (data.size() == 0) throw InvalidInputError("evaluate: empty dataset");
  return accuracy_of(forward(net, config, data.features, threads), data);
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (filter_frequency < 1) throw ConfigError("train: filter_frequency must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(loss.temperature > 0.0)) throw ConfigError("train: temperature must be > 0");
  if (!(loss.distill_weight >= 0.0 && loss.distill_weight <= 1.0)) {
    throw ConfigError("train: distill_weight must lie in [0, 1]");
  }
}

double train_step(Supernet& net, const SparseConfig& config, const Dataset& batch,
                  const DenseModel* teacher, const LossConfig& loss, Optimizer& optimizer) {
  const auto masks = net.masks(config);
  std::optional<Matrix<float>> teacher_logits;
  if (loss.distillation) {
    if (!teacher) throw InvalidInputError("train_step: distillation requires a teacher");
    teacher_logits = model_forward(teacher->arch, teacher->params, batch.features);
  }
  VitParams<float> grads;
  const float value = subnet_loss<float>(net.arch(), net.weights(), masks, batch,
                                         teacher_logits ? &*teacher_logits : nullptr, loss, &grads);
  if (!std::isfinite(value)) {
    throw TrainingError("non-finite loss " + std::to_string(value) + " for configuration " +
                        config.to_json() + " on a batch of " + std::to_string(batch.size()));
  }
  optimizer.step(net.weights(), grads, &masks);
  return value;
}

std::string TrainingLog::to_csv() const {
  std::ostringstream out;
  out << "iteration,config,interval,loss,outcome\n";
  for (const auto& s : steps) {
    out << s.iteration << ',';
    const auto items = s.config.to_strings();
    for (std::size_t i = 0; i < items.size(); ++i) out << (i ? " " : "") << items[i];
    out << ',' << (s.interval ? std::to_string(*s.interval) : std::string("-")) << ',';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", s.loss);
    out << buf << ',' << to_string(s.outcome) << '\n';
  }
  return out.str();
}

TrainingLog train(Supernet& net, const Dataset& data, const TrainConfig& config,
                  const TrainContext& context) {
  config.validate();
  data.validate(net.arch().input_size());
  if (config.filtering && (!context.proxy || context.proxy->size() == 0)) {
    throw InvalidInputError("train: filtering requires a non-empty proxy dataset");
  }
  const SearchSpace& space = net.space();
  Rng sample_rng(derive_seed(config.seed, 1));
  Rng filter_rng(derive_seed(config.seed, 3));
  BatchStream batches(data, config.batch_size, derive_seed(config.seed, 2));
  Optimizer optimizer(net.arch(), config.optimizer);

  TrainingLog log;
  ChoiceProbabilityTable table = ChoiceProbabilityTable::uniform(space);
  TwoStepOptions options;
  options.max_retries = config.max_retries;
  std::optional<TwoStepSampler> sampler;
  if (config.sampling == SamplingMode::two_step) {
    sampler.emplace(space, context.intervals, table, options);
  }

  for (std::size_t t = 1; t <= config.iterations; ++t) {
    if (config.filtering && t % config.filter_frequency == 0) {
      const Supernet& snapshot = net;
      Evaluator eval = [&](const SparseConfig& c) { return evaluate(snapshot, c, *context.proxy); };
      ConfigSampler pick;
      if (config.sampling == SamplingMode::two_step) {
        auto filter_sampler = std::make_shared<TwoStepSampler>(space, context.intervals, table, options);
        pick = [filter_sampler](const ChoiceProbabilityTable&, Rng& rng) {
          return filter_sampler->sample(rng).config;
        };
      } else {
        pick = [&space](const ChoiceProbabilityTable& p, Rng& rng) {
          return sample_from_table(space, p, rng);
        };
      }
      FilterReport report = update_probabilities(space, table, context.filter, eval, pick,
                                                  filter_rng, context.threads);
      table = report.table;
      if (sampler) sampler.emplace(space, context.intervals, table, options);
      log.filters.push_back({t, std::move(report)});
    }

    TrainStepRecord record;
    record.iteration = t;
    if (sampler) {
      SampleResult r = sampler->sample(sample_rng);
      record.config = std::move(r.config);
      record.interval = r.interval;
      record.outcome = r.outcome;
      if (is_fallback(r.outcome)) ++log.fallback_count;
    } else {
      record.config = sample_from_table(space, table, sample_rng);
      if (!context.intervals.boundaries.empty()) {
        record.interval = interval_of(context.intervals,
                                      static_cast<double>(config_flops(space.arch, record.config)));
      }
    }
    const Dataset batch = batches.next();
    record.loss = train_step(net, record.config, batch, context.teacher, config.loss, optimizer);
    log.steps.push_back(std::move(record));
  }
  log.final_table = table;
  return log;
}

std::vector<double> train_dense(DenseModel& model, const Dataset& data,
                                const DenseTrainConfig& config) {
  data.validate(model.arch.input_size());
  Optimizer optimizer(model.arch, config.optimizer);
  BatchStream batches(data, config.batch_size, derive_seed(config.seed, 4));
  const auto masks = dense_masks(model.params);
  std::vector<double> losses;
  losses.reserve(config.iterations);
  for (std::size_t t = 0; t < config.iterations; ++t) {
    const Dataset batch = batches.next();
    VitParams<float> grads;
    const float value =
        subnet_loss<float>(model.arch, model.params, masks, batch, nullptr, LossConfig{}, &grads);
    if (!std::isfinite(value)) throw TrainingError("dense training: non-finite loss at step " + std::to_string(t));
    optimizer.step(model.params, grads);
    losses.push_back(value);
  }
  return losses;
}

std::vector<double> train_fixed_subnet(Supernet& net, const SparseConfig& subnet, const Dataset& data,
                                       const DenseTrainConfig& config, const DenseModel* teacher,
                                       const LossConfig& loss) {
  data.validate(net.arch().input_size());
  Optimizer optimizer(net.arch(), config.optimizer);
  BatchStream batches(data, config.batch_size, derive_seed(config.seed, 2));
  std::vector<double> losses;
  losses.reserve(config.iterations);
  for (std::size_t t = 0; t < config.iterations; ++t) {
    losses.push_back(train_step(net, subnet, batches.next(), teacher, loss, optimizer));
  }
  return losses;
}

VitParams<float> SparseModel::materialize() const {
  VitParams<float> out = dense_params;
  for (std::size_t l = 0; l < modules.size(); ++l) out.prunable(l) = decode_sparse(modules[l]);
  return out;
}

Matrix<float> SparseModel::forward(const Matrix<float>& inputs, std::size_t threads) const {
  return model_forward(arch, materialize(), inputs, threads);
}

SparseModel extract_subnet(const Supernet& net, const SparseConfig& config) {
  check_runnable(net.space(), config);
  SparseModel out;
  out.arch = net.arch();
  out.config = config;
  out.dense_params = net.weights();
  for (std::size_t l = 0; l < config.size(); ++l) {
    out.modules.push_back(encode_sparse(net.weights().prunable(l), config[l]));
    out.dense_params.prunable(l).fill(0.0f);
  }
  return out;
}

}  // namespace nmsearch
