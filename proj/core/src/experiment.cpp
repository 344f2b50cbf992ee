#include "nmsearch/experiment.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "nmsearch/format.hpp"

namespace nmsearch {

namespace {

// Seed streams for the stages of an experiment.
enum : std::uint64_t {
  kDataStream = 10,
  kSplitStream = 11,
  kInitStream = 12,
  kPretrainStream = 13,
  kTrainStream = 14,
  kEvoStream = 15,
};

// Reads keys from one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const auto& v = j_.at(key);
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.template get<std::int64_t>() >= 0);
      if (!ok) throw ConfigError(where(key) + " must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    }
    try {
      out = v.template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const nlohmann::json& sub(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(where(key.c_str()) + ": unknown key");
    }
  }

  std::string where(const char* key) const { return path_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

OptimizerConfig read_optimizer(const nlohmann::json& j, const std::string& path, OptimizerConfig o) {
  Section s(j, path);
  std::string kind = to_string(o.kind);
  s.read("kind", kind);
  o.kind = parse_optimizer_kind(kind);
  s.read("learning_rate", o.learning_rate);
  s.read("weight_decay", o.weight_decay);
  s.read("beta1", o.beta1);
  s.read("beta2", o.beta2);
  s.read("eps", o.eps);
  s.finish();
  return o;
}

nlohmann::json optimizer_json(const OptimizerConfig& o) {
  return {{"kind", to_string(o.kind)}, {"learning_rate", o.learning_rate},
          {"weight_decay", o.weight_decay}, {"beta1", o.beta1},
          {"beta2", o.beta2}, {"eps", o.eps}};
}

const char* to_string(CrossoverKind kind) {
  return kind == CrossoverKind::uniform ? "uniform" : "one_point";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  pretrain.seed = derive_seed(s, kPretrainStream);
  train.seed = derive_seed(s, kTrainStream);
  evo.seed = derive_seed(s, kEvoStream);
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  Section root(j, "config");
  int version = 0;
  if (!root.has("schema_version")) throw ConfigError("config.schema_version is required");
  root.read("schema_version", version);
  if (version != kSchemaVersion) {
    throw ConfigError("config.schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  if (!root.has("seed")) throw ConfigError("config.seed is required");
  std::uint64_t seed = 0;
  root.read("seed", seed);

  if (root.has("arch")) cfg.arch = arch_from_json(root.sub("arch"));

  std::vector<std::string> levels{"1:4", "2:4", "4:4"};
  root.read("sparsity_levels", levels);
  for (const auto& text : levels) cfg.levels.push_back(SparsityLevel::parse(text));
  root.read("c_upper_fraction", cfg.c_upper_fraction);
  root.read("cost_levels", cfg.cost_levels);

  if (root.has("dataset")) {
    Section s(root.sub("dataset"), "config.dataset");
    std::string source = "synthetic";
    s.read("source", source);
    if (source == "synthetic") {
      cfg.data.source = DataConfig::Source::synthetic;
    } else if (source == "csv") {
      cfg.data.source = DataConfig::Source::csv;
    } else {
      throw ConfigError("config.dataset.source must be \"synthetic\" or \"csv\"");
    }
    s.read("n", cfg.data.n);
    s.read("noise", cfg.data.noise);
    s.read("path", cfg.data.path);
    s.read("feature_max", cfg.data.feature_max);
    if (s.has("split")) {
      Section split(s.sub("split"), "config.dataset.split");
      split.read("train", cfg.data.train);
      split.read("proxy", cfg.data.proxy);
      split.read("test", cfg.data.test);
      split.finish();
    }
    s.finish();
  }

  if (root.has("pretrain")) {
    Section s(root.sub("pretrain"), "config.pretrain");
    s.read("iterations", cfg.pretrain.iterations);
    s.read("batch_size", cfg.pretrain.batch_size);
    if (s.has("optimizer")) {
      cfg.pretrain.optimizer = read_optimizer(s.sub("optimizer"), "config.pretrain.optimizer", cfg.pretrain.optimizer);
    }
    s.finish();
  }

  if (root.has("train")) {
    Section s(root.sub("train"), "config.train");
    s.read("iterations", cfg.train.iterations);
    s.read("batch_size", cfg.train.batch_size);
    s.read("filter_frequency", cfg.train.filter_frequency);
    s.read("filtering", cfg.train.filtering);
    std::string sampling = to_string(cfg.train.sampling);
    s.read("sampling", sampling);
    cfg.train.sampling = parse_sampling_mode(sampling);
    s.read("max_retries", cfg.train.max_retries);
    if (s.has("loss")) {
      Section loss(s.sub("loss"), "config.train.loss");
      loss.read("distillation", cfg.train.loss.distillation);
      loss.read("temperature", cfg.train.loss.temperature);
      loss.read("distill_weight", cfg.train.loss.distill_weight);
      loss.finish();
    }
    if (s.has("optimizer")) {
      cfg.train.optimizer = read_optimizer(s.sub("optimizer"), "config.train.optimizer", cfg.train.optimizer);
    }
    s.finish();
  }

  if (root.has("filter")) {
    Section s(root.sub("filter"), "config.filter");
    s.read("n_eval", cfg.filter.n_eval);
    s.read("acc_threshold", cfg.filter.acc_threshold);
    s.finish();
  }

  if (root.has("evo")) {
    Section s(root.sub("evo"), "config.evo");
    s.read("population_size", cfg.evo.population_size);
    s.read("generations", cfg.evo.generations);
    s.read("mutation_prob", cfg.evo.mutation_prob);
    s.read("crossover_pairs", cfg.evo.crossover_pairs);
    s.read("top_k", cfg.evo.top_k);
    if (s.has("flops_budget_fraction")) {
      double f = 0.0;
      s.read("flops_budget_fraction", f);
      cfg.flops_budget_fraction = f;
    }
    std::string crossover = to_string(cfg.evo.crossover);
    s.read("crossover", crossover);
    cfg.evo.crossover = parse_crossover_kind(crossover);
    s.read("max_retries", cfg.evo.max_retries);
    s.read("sample_retries", cfg.evo.sample_retries);
    s.finish();
  }

  if (root.has("baselines")) {
    Section s(root.sub("baselines"), "config.baselines");
    s.read("er_targets", cfg.er_targets);
    s.finish();
  }

  root.read("output_dir", cfg.output_dir);
  root.read("threads", cfg.threads);
  root.finish();

  cfg.set_seed(seed);
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
  std::vector<std::string> level_text;
  for (const auto& l : levels) level_text.push_back(l.to_string());
  nlohmann::json dataset = {{"source", data.source == DataConfig::Source::synthetic ? "synthetic" : "csv"},
                            {"split", {{"train", data.train}, {"proxy", data.proxy}, {"test", data.test}}}};
  if (data.source == DataConfig::Source::synthetic) {
    dataset["n"] = data.n;
    dataset["noise"] = data.noise;
  } else {
    dataset["path"] = data.path;
    dataset["feature_max"] = data.feature_max;
  }
  nlohmann::json evo_json = {{"population_size", evo.population_size},
                             {"generations", evo.generations},
                             {"mutation_prob", evo.mutation_prob},
                             {"crossover_pairs", evo.crossover_pairs},
                             {"top_k", evo.top_k},
                             {"crossover", to_string(evo.crossover)},
                             {"max_retries", evo.max_retries},
                             {"sample_retries", evo.sample_retries}};
  if (flops_budget_fraction) evo_json["flops_budget_fraction"] = *flops_budget_fraction;
  return {
      {"schema_version", kSchemaVersion},
      {"seed", seed},
      {"arch", arch_to_json(arch)},
      {"sparsity_levels", level_text},
      {"c_upper_fraction", c_upper_fraction},
      {"cost_levels", cost_levels},
      {"dataset", dataset},
      {"pretrain",
       {{"iterations", pretrain.iterations},
        {"batch_size", pretrain.batch_size},
        {"optimizer", optimizer_json(pretrain.optimizer)}}},
      {"train",
       {{"iterations", train.iterations},
        {"batch_size", train.batch_size},
        {"filter_frequency", train.filter_frequency},
        {"filtering", train.filtering},
        {"sampling", to_string(train.sampling)},
        {"max_retries", train.max_retries},
        {"loss",
         {{"distillation", train.loss.distillation},
          {"temperature", train.loss.temperature},
          {"distill_weight", train.loss.distill_weight}}},
        {"optimizer", optimizer_json(train.optimizer)}}},
      {"filter", {{"n_eval", filter.n_eval}, {"acc_threshold", filter.acc_threshold}}},
      {"evo", evo_json},
      {"baselines", {{"er_targets", er_targets}}},
      {"output_dir", output_dir},
      {"threads", threads},
  };
}

std::string ExperimentConfig::hash() const {
  nlohmann::json j = to_json();
  j.erase("output_dir");
  j.erase("threads");
  return hex64(fnv1a(j.dump()));
}

SearchSpace ExperimentConfig::space() const {
  return SearchSpace::make(arch, levels, c_upper_fraction);
}

CostIntervals ExperimentConfig::intervals() const { return build_intervals(space(), cost_levels); }

void ExperimentConfig::validate() const {
  arch.validate();
  if (arch.kind != ArchKind::vit) throw ConfigError("experiments need a vit arch");
  (void)intervals();
  train.validate();
  filter.validate();
  evo.validate();
  if (flops_budget_fraction && !(*flops_budget_fraction > 0.0)) {
    throw ConfigError("config.evo.flops_budget_fraction must be positive");
  }
  if (data.train == 0 || data.proxy == 0 || data.test == 0) {
    throw ConfigError("config.dataset.split: every split needs at least one sample");
  }
  if (data.source == DataConfig::Source::synthetic) {
    if (arch.channels != 1) throw ConfigError("synthetic data is single-channel");
    if (data.n < data.train + data.proxy + data.test) {
      throw ConfigError("config.dataset.n is smaller than the sum of the splits");
    }
    if (!(data.noise >= 0.0)) throw ConfigError("config.dataset.noise must be non-negative");
  } else {
    if (data.path.empty()) throw ConfigError("config.dataset.path is required for csv data");
    if (!(data.feature_max > 0.0)) throw ConfigError("config.dataset.feature_max must be positive");
  }
  if (pretrain.iterations == 0 || pretrain.batch_size == 0) {
    throw ConfigError("config.pretrain: iterations and batch_size must be positive");
  }
  for (const double t : er_targets) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("config.baselines.er_targets must lie in (0, 1)");
  }
  if (threads == 0) throw ConfigError("config.threads must be at least 1");
}

ExperimentData prepare_data(const ExperimentConfig& cfg) {
  Dataset all;
  if (cfg.data.source == DataConfig::Source::synthetic) {
    all = synth_dataset({cfg.data.n, cfg.arch.num_classes, cfg.arch.image_side, cfg.data.noise,
                         derive_seed(cfg.seed, kDataStream)});
  } else {
    all = load_csv(cfg.data.path, {cfg.arch.num_classes, cfg.arch.input_size(), cfg.data.feature_max});
  }
  all.validate(cfg.arch.input_size());
  const std::array<std::size_t, 3> sizes{cfg.data.train, cfg.data.proxy, cfg.data.test};
  auto parts = split_dataset(all, sizes, derive_seed(cfg.seed, kSplitStream));
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

DenseModel pretrain_teacher(const ExperimentConfig& cfg, const ExperimentData& data) {
  DenseModel model{cfg.arch, VitParams<float>::init(cfg.arch, derive_seed(cfg.seed, kInitStream))};
  train_dense(model, data.train, cfg.pretrain);
  return model;
}

SupernetRun train_supernet(const ExperimentConfig& cfg, const DenseModel& teacher,
                           const ExperimentData& data, const TrainConfig& train_cfg) {
  SupernetRun run{Supernet::from_pretrained(cfg.space(), teacher), {}};
  TrainContext ctx{cfg.intervals(), cfg.filter, &data.proxy, &teacher, cfg.threads};
  run.log = train(run.net, data.train, train_cfg, ctx);
  return run;
}

SearchResult search_supernet(const ExperimentConfig& cfg, const Supernet& net,
                             const ChoiceProbabilityTable& table, const ExperimentData& data) {
  EvoConfig evo = cfg.evo;
  if (cfg.flops_budget_fraction) {
    evo.flops_budget = *cfg.flops_budget_fraction * static_cast<double>(net.space().dense());
  }
  const Evaluator eval = [&](const SparseConfig& c) { return evaluate(net, c, data.proxy); };
  return evolutionary_search(net.space(), cfg.intervals(), table, evo, eval, cfg.threads);
}

ChoiceProbabilityTable table_from_json(const SearchSpace& space, const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(std::string("probability table: ") + e.what());
  }
  if (!j.is_array() || j.size() != space.arch.num_prunable()) {
    throw DecodeError("probability table: expected one row per prunable module");
  }
  ChoiceProbabilityTable table;
  for (const auto& row : j) {
    if (!row.is_object() || row.size() != space.levels.size()) {
      throw DecodeError("probability table: each row needs one entry per level");
    }
    std::vector<double> p;
    double sum = 0.0;
    for (const auto& level : space.levels) {
      const auto it = row.find(level.to_string());
      if (it == row.end() || !it->is_number()) {
        throw DecodeError("probability table: missing level " + level.to_string());
      }
      p.push_back(it->get<double>());
      sum += p.back();
    }
    if (!(sum > 0.0)) throw DecodeError("probability table: row with no mass");
    // Entries are stored with 9 significant digits.
    for (double& v : p) v /= sum;
    table.p.push_back(std::move(p));
  }
  table.validate();
  return table;
}

Mode parse_mode(const std::string& text) {
  static const std::array<std::pair<const char*, Mode>, 8> names{{
      {"pretrain", Mode::pretrain},
      {"train-supernet", Mode::train_supernet},
      {"search", Mode::search},
      {"run", Mode::run},
      {"ablation-sampling", Mode::ablation_sampling},
      {"ablation-filter", Mode::ablation_filter},
      {"compare-er", Mode::compare_er},
      {"compare-estimator", Mode::compare_estimator},
  }};
  for (const auto& [name, mode] : names) {
    if (text == name) return mode;
  }
  throw ConfigError("unknown mode \"" + text + "\"");
}

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::pretrain: return "pretrain";
    case Mode::train_supernet: return "train-supernet";
    case Mode::search: return "search";
    case Mode::run: return "run";
    case Mode::ablation_sampling: return "ablation-sampling";
    case Mode::ablation_filter: return "ablation-filter";
    case Mode::compare_er: return "compare-er";
    case Mode::compare_estimator: return "compare-estimator";
  }
  return "?";
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class RunContext {
 public:
  RunContext(const ExperimentConfig& cfg, Mode mode)
      : cfg_(cfg), mode_(mode), dir_(cfg.output_dir), hash_(cfg.hash()) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw StageError("setup", "invalid_input", "cannot create " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << content;
    if (!out) throw InvalidInputError("failed writing " + (dir_ / name).string());
    artifacts_.push_back(name);
  }

  void record(const std::string& name) { artifacts_.push_back(name); }

  template <typename F>
  auto stage(const std::string& name, F&& fn) {
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        stages_.push_back(name);
      } else {
        auto result = fn();
        stages_.push_back(name);
        return result;
      }
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      fail(name, e.kind(), e.what());
    } catch (const std::exception& e) {
      fail(name, "internal", e.what());
    }
  }

  RunSummary finish() {
    write_manifest("ok", nullptr);
    return {dir_, artifacts_, hash_};
  }

 private:
  struct Failure {
    std::string stage, kind, message;
  };

  [[noreturn]] void fail(const std::string& stage, const std::string& kind, const std::string& message) {
    const Failure f{stage, kind, message};
    try {
      write_manifest("failed", &f);
    } catch (...) {
    }
    throw StageError(stage, kind, message);
  }

  void write_manifest(const std::string& status, const Failure* failure) {
    nlohmann::json m = {{"config_hash", hash_},
                        {"schema_version", kSchemaVersion},
                        {"mode", to_string(mode_)},
                        {"seed", cfg_.seed},
                        {"rng", kRngName},
                        {"threads", cfg_.threads},
                        {"status", status},
                        {"stages_completed", stages_},
                        {"artifacts", artifacts_},
                        {"partial", failure != nullptr},
                        {"config", cfg_.to_json()},
#if defined(__clang__)
                        {"compiler", "clang " __clang_version__},
#elif defined(__GNUC__)
                        {"compiler", "gcc " __VERSION__},
#else
                        {"compiler", "unknown"},
#endif
                        {"cpp_standard", __cplusplus}};
    if (failure) {
      m["failed_stage"] = failure->stage;
      m["error"] = {{"kind", failure->kind}, {"message", failure->message}};
    }
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << m.dump(2) << "\n";
  }

  const ExperimentConfig& cfg_;
  Mode mode_;
  std::filesystem::path dir_;
  std::string hash_;
  std::vector<std::string> stages_;
  std::vector<std::string> artifacts_;
};

std::string layers_csv(const SearchSpace& space, const std::vector<Candidate>& front) {
  const auto modules = space.arch.prunable_modules();
  std::string out = "frontier_index,flops,accuracy,layer,block,role,level\n";
  for (std::size_t i = 0; i < front.size(); ++i) {
    for (const auto& m : modules) {
      out += std::to_string(i) + "," + std::to_string(front[i].flops) + "," + format9(front[i].accuracy) +
             "," + std::to_string(m.index) + "," + std::to_string(m.block) + "," + to_string(m.role) + "," +
             front[i].config.levels[m.index].to_string() + "\n";
    }
  }
  return out;
}

nlohmann::json metrics_json(const Supernet& net, const Dataset& test) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& level : net.space().levels) {
    const SparseConfig c = uniform_level_config(net.space(), level);
    rows.push_back({{"uniform_level", level.to_string()},
                    {"flops", config_flops(net.arch(), c)},
                    {"test_accuracy", round9(evaluate(net, c, test))}});
  }
  return rows;
}

std::vector<std::size_t> interval_histogram(const TrainingLog& log, const CostIntervals& intervals) {
  std::vector<std::size_t> counts(intervals.count(), 0);
  for (const auto& s : log.steps) {
    if (s.interval) ++counts[*s.interval];
  }
  return counts;
}

nlohmann::json frontier_of(const SearchSpace& space, const std::vector<Candidate>& front, const std::string& hash) {
  return nlohmann::json::parse(pareto_json(space, front, hash)).at("frontier");
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg, Mode mode) {
  cfg.validate();
  RunContext ctx(cfg, mode);
  const SearchSpace space = cfg.space();
  const CostIntervals intervals = cfg.intervals();
  const auto teacher_path = ctx.dir() / "teacher.ckpt";
  const auto supernet_path = ctx.dir() / "supernet.ckpt";
  const auto table_path = ctx.dir() / "probability_table.json";

  const ExperimentData data = ctx.stage("data", [&] { return prepare_data(cfg); });

  auto get_teacher = [&] {
    return ctx.stage("pretrain", [&] {
      if (mode != Mode::pretrain && std::filesystem::exists(teacher_path)) {
        DenseModel t = load_checkpoint(teacher_path);
        if (!(t.arch == cfg.arch)) throw ConfigError("teacher.ckpt was trained for a different arch");
        return t;
      }
      DenseModel t = pretrain_teacher(cfg, data);
      save_checkpoint(teacher_path, t);
      ctx.record("teacher.ckpt");
      const nlohmann::json metrics = {
          {"train_accuracy", round9(model_accuracy(t.arch, t.params, data.train, cfg.threads))},
          {"test_accuracy", round9(model_accuracy(t.arch, t.params, data.test, cfg.threads))}};
      ctx.write("teacher_metrics.json", metrics.dump(2) + "\n");
      return t;
    });
  };

  auto emit_training = [&](const SupernetRun& run) {
    save_checkpoint(supernet_path, DenseModel{cfg.arch, run.net.weights()});
    ctx.record("supernet.ckpt");
    ctx.write("training_log.csv", run.log.to_csv());
    ctx.write("probability_table.json", run.log.final_table.to_json(space));
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : run.log.filters) {
      events.push_back({{"iteration", e.iteration}, {"choices", nlohmann::json::parse(e.report.to_json(space))}});
    }
    ctx.write("filter_events.json", events.dump(2) + "\n");
    const nlohmann::json metrics = {{"fallback_count", run.log.fallback_count},
                                    {"interval_histogram", interval_histogram(run.log, intervals)},
                                    {"uniform_subnets", metrics_json(run.net, data.test)}};
    ctx.write("supernet_metrics.json", metrics.dump(2) + "\n");
  };

  auto emit_search = [&](const SearchResult& result) {
    ctx.write("pareto.json", pareto_json(space, result.pareto, ctx.hash()));
    ctx.write("generations.csv", result.generations_csv());
    ctx.write("pareto_layers.csv", layers_csv(space, result.pareto));
  };

  auto train_and_search = [&](const DenseModel& teacher) {
    SupernetRun run = ctx.stage("train_supernet", [&] { return train_supernet(cfg, teacher, data, cfg.train); });
    ctx.stage("emit_training", [&] { emit_training(run); });
    SearchResult result = ctx.stage("search", [&] { return search_supernet(cfg, run.net, run.log.final_table, data); });
    ctx.stage("emit_search", [&] { emit_search(result); });
    return std::make_pair(std::move(run), std::move(result));
  };

  switch (mode) {
    case Mode::pretrain:
      get_teacher();
      break;
    case Mode::train_supernet: {
      const DenseModel teacher = get_teacher();
      SupernetRun run = ctx.stage("train_supernet", [&] { return train_supernet(cfg, teacher, data, cfg.train); });
      ctx.stage("emit_training", [&] { emit_training(run); });
      break;
    }
    case Mode::search: {
      auto [net, table] = ctx.stage("load_supernet", [&] {
        if (!std::filesystem::exists(supernet_path) || !std::filesystem::exists(table_path)) {
          throw InvalidInputError("supernet.ckpt and probability_table.json are required; run train-supernet first");
        }
        return std::make_pair(Supernet::from_pretrained(space, load_checkpoint(supernet_path)),
                              table_from_json(space, read_file(table_path)));
      });
      SearchResult result = ctx.stage("search", [&] { return search_supernet(cfg, net, table, data); });
      ctx.stage("emit_search", [&] { emit_search(result); });
      break;
    }
    case Mode::run: {
      const DenseModel teacher = get_teacher();
      train_and_search(teacher);
      break;
    }
    case Mode::ablation_sampling:
    case Mode::ablation_filter: {
      const DenseModel teacher = get_teacher();
      const bool sampling = mode == Mode::ablation_sampling;
      nlohmann::json variants = nlohmann::json::array();
      for (int v = 0; v < 2; ++v) {
        TrainConfig tc = cfg.train;
        std::string name;
        if (sampling) {
          tc.sampling = v == 0 ? SamplingMode::vanilla : SamplingMode::two_step;
          name = to_string(tc.sampling);
        } else {
          tc.filtering = v == 1;
          name = tc.filtering ? "filtering" : "no_filtering";
        }
        SupernetRun run = ctx.stage("train_supernet:" + name, [&] { return train_supernet(cfg, teacher, data, tc); });
        SearchResult result =
            ctx.stage("search:" + name, [&] { return search_supernet(cfg, run.net, run.log.final_table, data); });
        variants.push_back({{"name", name},
                            {"interval_histogram", interval_histogram(run.log, intervals)},
                            {"fallback_count", run.log.fallback_count},
                            {"filter_events", run.log.filters.size()},
                            {"frontier", frontier_of(space, result.pareto, ctx.hash())}});
      }
      ctx.stage("emit_ablation", [&] {
        const nlohmann::json out = {{"config_hash", ctx.hash()}, {"variants", variants}};
        ctx.write(sampling ? "ablation_sampling.json" : "ablation_filter.json", out.dump(2) + "\n");
      });
      break;
    }
    case Mode::compare_er: {
      const DenseModel teacher = get_teacher();
      auto [run, result] = train_and_search(teacher);
      ctx.stage("compare_er", [&] {
        std::vector<double> usable;
        nlohmann::json skipped = nlohmann::json::array();
        for (const double t : cfg.er_targets) {
          try {
            const SparseConfig c = er_config(space, t);
            if (const auto v = validate(space, c)) {
              skipped.push_back({{"target_sparsity", round9(t)}, {"reason", v->message}});
              continue;
            }
            usable.push_back(t);
          } catch (const ConfigError& e) {
            skipped.push_back({{"target_sparsity", round9(t)}, {"reason", e.what()}});
          }
        }
        const auto points = compare_er(run.net, usable, result.pareto, data.test, cfg.threads);
        const nlohmann::json out = {{"config_hash", ctx.hash()},
                                    {"points", nlohmann::json::parse(baseline_json(space, points))},
                                    {"skipped", skipped}};
        ctx.write("compare_er.json", out.dump(2) + "\n");
      });
      break;
    }
    case Mode::compare_estimator: {
      const DenseModel teacher = get_teacher();
      SupernetRun run = ctx.stage("train_supernet", [&] { return train_supernet(cfg, teacher, data, cfg.train); });
      ctx.stage("emit_training", [&] { emit_training(run); });
      ctx.stage("compare_estimator", [&] {
        EvoConfig evo = cfg.evo;
        if (cfg.flops_budget_fraction) {
          evo.flops_budget = *cfg.flops_budget_fraction * static_cast<double>(space.dense());
        }
        const EstimatorComparison cmp = compare_estimators(teacher, run.net, intervals, run.log.final_table, evo,
                                                           data.proxy, data.test, cfg.threads);
        nlohmann::json out = nlohmann::json::parse(cmp.to_json(space));
        out["config_hash"] = ctx.hash();
        ctx.write("compare_estimator.json", out.dump(2) + "\n");
      });
      break;
    }
  }
  return ctx.finish();
}

}  // namespace nmsearch
