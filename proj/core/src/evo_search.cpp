#include "nmsearch/evo_search.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nmsearch/errors.hpp"
#include "nmsearch/format.hpp"
#include "nmsearch/parallel.hpp"

namespace nmsearch {

Candidate Candidate::make(const SearchSpace& space, SparseConfig config, double accuracy) {
  Candidate c;
  c.flops = config_flops(space.arch, config);
  c.config = std::move(config);
  c.accuracy = accuracy;
  return c;
}

CrossoverKind parse_crossover_kind(const std::string& text) {
  if (text == "uniform") return CrossoverKind::uniform;
  if (text == "one_point") return CrossoverKind::one_point;
  throw ConfigError("unknown crossover \"" + text + "\" (expected uniform or one_point)");
}

void EvoConfig::validate() const {
  if (population_size < 1) throw ConfigError("evo: population_size must be >= 1");
  if (top_k < 1 || top_k > population_size) throw ConfigError("evo: need 1 <= top_k <= population_size");
  if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0)) throw ConfigError("evo: mutation_prob must lie in [0, 1]");
}

std::vector<SparseConfig> init_population(const SearchSpace& space, const CostIntervals& intervals,
                                          const ChoiceProbabilityTable& table, const EvoConfig& config,
                                          Rng& rng) {
  config.validate();
  TwoStepOptions options;
  options.max_retries = config.sample_retries;
  const TwoStepSampler sampler(space, intervals, table, options);
  std::vector<SparseConfig> out;
  std::set<SparseConfig> seen;
  constexpr std::size_t kDuplicateRetries = 20;
  while (out.size() < config.population_size) {
    SparseConfig c = sampler.sample(rng).config;
    for (std::size_t r = 0; r < kDuplicateRetries && seen.count(c); ++r) c = sampler.sample(rng).config;
    seen.insert(c);
    out.push_back(std::move(c));
  }
  return out;
}

SparseConfig mutate(const SparseConfig& config, const SearchSpace& space, double mutation_prob,
                    Rng& rng, const ChoiceProbabilityTable* table, std::size_t max_retries) {
  if (mutation_prob <= 0.0) return config;
  std::vector<std::size_t> options;
  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    SparseConfig out = config;
    for (std::size_t l = 0; l < out.size(); ++l) {
      if (!(uniform01(rng) < mutation_prob)) continue;
      const auto current = space.level_index(out[l]);
      options.clear();
      for (std::size_t s = 0; s < space.num_levels(); ++s) {
        if (current && s == *current) continue;
        if (table && !(table->p[l][s] > 0.0)) continue;
        options.push_back(s);
      }
      if (options.empty()) continue;
      out[l] = space.levels[options[uniform_index(rng, options.size())]];
    }
    if (!validate(space, out)) return out;
  }
  return config;
}

SparseConfig crossover(const SparseConfig& a, const SparseConfig& b, Rng& rng, CrossoverKind kind) {
  if (a.size() != b.size()) throw ShapeError("crossover: parents differ in length");
  SparseConfig out = a;
  if (kind == CrossoverKind::uniform) {
    for (std::size_t l = 0; l < out.size(); ++l) {
      if (uniform01(rng) < 0.5) out[l] = b[l];
    }
  } else if (out.size() > 1) {
    const std::size_t cut = 1 + uniform_index(rng, out.size() - 1);
    for (std::size_t l = cut; l < out.size(); ++l) out[l] = b[l];
  }
  return out;
}

double fitness(const Candidate& candidate, std::optional<double> budget) {
  if (budget && static_cast<double>(candidate.flops) > *budget) {
    return -std::numeric_limits<double>::infinity();
  }
  return candidate.accuracy;
}

bool fitter(const Candidate& a, const Candidate& b, std::optional<double> budget) {
  const double fa = fitness(a, budget);
  const double fb = fitness(b, budget);
  if (fa != fb) return fa > fb;
  if (a.flops != b.flops) return a.flops < b.flops;
  return a.config < b.config;
}

std::vector<Candidate> pareto_front(const std::vector<Candidate>& candidates) {
  std::vector<Candidate> front;
  for (const auto& c : candidates) {
    bool dominated = false;
    for (const auto& o : candidates) {
      if (o.flops <= c.flops && o.accuracy >= c.accuracy &&
          (o.flops < c.flops || o.accuracy > c.accuracy)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) front.push_back(c);
  }
  std::sort(front.begin(), front.end(), [](const Candidate& a, const Candidate& b) {
    return a.flops != b.flops ? a.flops < b.flops : a.config < b.config;
  });
  front.erase(std::unique(front.begin(), front.end(),
                          [](const Candidate& a, const Candidate& b) { return a.config == b.config; }),
              front.end());
  return front;
}

std::string SearchResult::generations_csv() const {
  std::ostringstream out;
  out << "generation,best_acc,mean_acc,archive_size\n";
  for (const auto& g : generations) {
    out << g.generation << ',' << format9(g.best_accuracy) << ',' << format9(g.mean_accuracy) << ','
        << g.archive_size << '\n';
  }
  return out.str();
}

namespace {

class Archive {
 public:
  Archive(const SearchSpace& space, const Evaluator& evaluate, std::size_t threads)
      : space_(space), evaluate_(evaluate), threads_(threads) {}

  // Evaluates configs not yet seen; returns candidates for all inputs.
  std::vector<Candidate> lookup(const std::vector<SparseConfig>& configs) {
    std::vector<SparseConfig> fresh;
    std::set<SparseConfig> pending;
    for (const auto& c : configs) {
      if (!entries_.count(c) && pending.insert(c).second) fresh.push_back(c);
    }
    std::vector<double> acc(fresh.size());
    parallel_for(fresh.size(), threads_, [&](std::size_t i) { acc[i] = evaluate_(fresh[i]); });
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      entries_.emplace(fresh[i], Candidate::make(space_, fresh[i], acc[i]));
    }
    std::vector<Candidate> out;
    out.reserve(configs.size());
    for (const auto& c : configs) out.push_back(entries_.at(c));
    return out;
  }

  std::vector<Candidate> all() const {
    std::vector<Candidate> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(v);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  double best_fitness(std::optional<double> budget) const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [k, v] : entries_) best = std::max(best, fitness(v, budget));
    return best;
  }

 private:
  const SearchSpace& space_;
  const Evaluator& evaluate_;
  std::size_t threads_;
  std::map<SparseConfig, Candidate> entries_;
};

std::vector<Candidate> select_top(std::vector<Candidate> pool, std::size_t k,
                                  std::optional<double> budget) {
  std::sort(pool.begin(), pool.end(),
            [&](const Candidate& a, const Candidate& b) { return fitter(a, b, budget); });
  pool.erase(std::unique(pool.begin(), pool.end(),
                         [](const Candidate& a, const Candidate& b) { return a.config == b.config; }),
             pool.end());
  if (pool.size() > k) pool.resize(k);
  return pool;
}

GenerationStats stats_for(std::size_t generation, const Archive& archive,
                          const std::vector<Candidate>& population, std::optional<double> budget) {
  GenerationStats s;
  s.generation = generation;
  s.best_accuracy = archive.best_fitness(budget);
  double sum = 0.0;
  for (const auto& c : population) sum += c.accuracy;
  s.mean_accuracy = population.empty() ? 0.0 : sum / static_cast<double>(population.size());
  s.archive_size = archive.size();
  return s;
}

}  // namespace

SearchResult evolutionary_search(const SearchSpace& space, const CostIntervals& intervals,
                                 const ChoiceProbabilityTable& table, const EvoConfig& config,
                                 const Evaluator& evaluate, std::size_t threads) {
  config.validate();
  Rng rng(config.seed);
  Archive archive(space, evaluate, threads);
  SearchResult result;

  std::vector<Candidate> population = archive.lookup(init_population(space, intervals, table, config, rng));
  population = select_top(std::move(population), config.population_size, config.flops_budget);
  result.generations.push_back(stats_for(0, archive, population, config.flops_budget));

  for (std::size_t g = 1; g <= config.generations; ++g) {
    std::vector<SparseConfig> children;
    children.reserve(config.population_size + config.crossover_pairs);
    for (std::size_t i = 0; i < config.population_size; ++i) {
      const auto& parent = population[uniform_index(rng, population.size())];
      children.push_back(mutate(parent.config, space, config.mutation_prob, rng, &table,
                                config.max_retries));
    }
    for (std::size_t i = 0; i < config.crossover_pairs; ++i) {
      for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
        const auto& a = population[uniform_index(rng, population.size())];
        const auto& b = population[uniform_index(rng, population.size())];
        SparseConfig child = crossover(a.config, b.config, rng, config.crossover);
        if (!validate(space, child)) {
          children.push_back(std::move(child));
          break;
        }
      }
    }
    std::vector<Candidate> pool = archive.lookup(children);
    pool.insert(pool.end(), population.begin(), population.end());
    population = select_top(std::move(pool), config.top_k, config.flops_budget);
    result.generations.push_back(stats_for(g, archive, population, config.flops_budget));
  }

  result.archive = archive.all();
  result.population = population;
  result.pareto = pareto_front(result.archive);
  return result;
}

std::vector<Candidate> brute_force_pareto(const SearchSpace& space, const Evaluator& evaluate,
                                          std::size_t max_count, std::size_t threads) {
  const auto configs = enumerate(space, max_count);
  std::vector<double> acc(configs.size());
  parallel_for(configs.size(), threads, [&](std::size_t i) { acc[i] = evaluate(configs[i]); });
  std::vector<Candidate> all;
  all.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) all.push_back(Candidate::make(space, configs[i], acc[i]));
  return pareto_front(all);
}

std::string pareto_json(const SearchSpace& space, const std::vector<Candidate>& front,
                        const std::string& config_hash) {
  const double dense = static_cast<double>(space.dense());
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : front) {
    list.push_back({{"config", c.config.to_strings()},
                    {"flops", c.flops},
                    {"flops_ratio_vs_dense", round9(static_cast<double>(c.flops) / dense)},
                    {"accuracy", round9(c.accuracy)}});
  }
  nlohmann::json out = {{"config_hash", config_hash}, {"frontier", list}};
  return out.dump(2) + "\n";
}

}  // namespace nmsearch
