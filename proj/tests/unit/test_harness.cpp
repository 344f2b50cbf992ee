#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nmsearch/checkpoint.hpp"
#include "nmsearch/experiment.hpp"

using namespace nmsearch;
namespace fs = std::filesystem;

namespace {

nlohmann::json minimal() { return {{"schema_version", 1}, {"seed", 3}}; }

// A config small enough to run every stage in a couple of seconds.
nlohmann::json tiny_run(const fs::path& out) {
  return {{"schema_version", 1},
          {"seed", 5},
          {"arch", {{"blocks", 1}, {"embed_dim", 16}, {"image_side", 8}, {"num_classes", 3}}},
          {"sparsity_levels", {"1:4", "2:4", "4:4"}},
          {"c_upper_fraction", 0.8},
          {"cost_levels", 5},
          {"dataset", {{"n", 96}, {"noise", 0.3}, {"split", {{"train", 48}, {"proxy", 24}, {"test", 24}}}}},
          {"pretrain", {{"iterations", 20}, {"batch_size", 16}}},
          {"train", {{"iterations", 10}, {"batch_size", 8}, {"filter_frequency", 5}}},
          {"filter", {{"n_eval", 4}, {"acc_threshold", 0.0}}},
          {"evo", {{"population_size", 6}, {"generations", 2}, {"crossover_pairs", 3}, {"top_k", 6}}},
          {"output_dir", out.string()}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(NMSEARCH_TEST_SCRATCH) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = ExperimentConfig::from_json(minimal());
  CHECK(cfg.seed == 3);
  CHECK(cfg.c_upper_fraction == 0.6);
  CHECK(cfg.levels.size() == 3);
  CHECK_NOTHROW(cfg.validate());

  auto j = minimal();
  j.erase("seed");
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = minimal();
  j["schema_version"] = 2;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = minimal();
  j["colour"] = "red";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = minimal();
  j["train"] = {{"sampling", "two_step"}, {"loss", {{"temprature", 2.0}}}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = minimal();
  j["train"] = {{"sampling", "greedy"}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = minimal();
  j["sparsity_levels"] = {"1:4", "2:4"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ConfigError);
  j = minimal();
  j["seed"] = "three";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  SUBCASE("canonical form round-trips") {
    const auto full = ExperimentConfig::from_json(tiny_run("x"));
    const auto again = ExperimentConfig::from_json(full.to_json());
    CHECK(again.to_json() == full.to_json());
    CHECK(again.hash() == full.hash());
  }

  SUBCASE("hash ignores output location and threads only") {
    auto a = ExperimentConfig::from_json(minimal());
    auto b = a;
    b.output_dir = "elsewhere";
    b.threads = 8;
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    b.set_seed(4);
    CHECK(a.hash() != b.hash());
    b = a;
    b.filter.acc_threshold = 0.2;
    CHECK(a.hash() != b.hash());
  }

  SUBCASE("stage seeds derive from the master seed") {
    auto a = ExperimentConfig::from_json(minimal());
    auto b = a;
    b.set_seed(99);
    CHECK(a.train.seed != b.train.seed);
    CHECK(a.evo.seed != b.evo.seed);
    CHECK(a.train.seed != a.evo.seed);
  }
}

TEST_CASE("modes") {
  for (const auto m : {Mode::pretrain, Mode::train_supernet, Mode::search, Mode::run, Mode::ablation_sampling,
                       Mode::ablation_filter, Mode::compare_er, Mode::compare_estimator}) {
    CHECK(parse_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_mode("fly"), ConfigError);
}

TEST_CASE("checkpoints") {
  ArchSpec arch;
  arch.blocks = 1;
  arch.embed_dim = 16;
  const DenseModel model{arch, VitParams<float>::init(arch, 9)};
  const auto bytes = serialize_checkpoint(model);
  CHECK(bytes.compare(0, 8, std::string("NMSCKPT\0", 8)) == 0);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.arch == arch);
  std::vector<const Matrix<float>*> orig;
  model.params.for_each([&](const std::string&, const Matrix<float>& m) { orig.push_back(&m); });
  std::size_t i = 0;
  bool same = true;
  back.params.for_each([&](const std::string&, const Matrix<float>& m) { same = same && m == *orig[i++]; });
  CHECK(same);
  CHECK(serialize_checkpoint(back) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), DecodeError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), DecodeError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), DecodeError);
  CHECK_THROWS_AS(deserialize_checkpoint(""), DecodeError);

  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "m.ckpt", model);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "m.ckpt")) == bytes);

  CHECK(arch_from_json(arch_to_json(arch)) == arch);
  CHECK_THROWS_AS(arch_from_json({{"depth", 3}}), ConfigError);
}

TEST_CASE("CSV datasets") {
  const auto d = parse_csv("label,a,b\n1,0,255\n0,128,64\n", CsvOptions{2, 0, 255.0});
  CHECK(d.size() == 2);
  CHECK(d.dim() == 2);
  CHECK(d.labels[0] == 1);
  CHECK(d.features(0, 1) == 1.0f);
  CHECK_THROWS_AS(parse_csv("1,0\n2,0\n", CsvOptions{2, 0, 1.0}), ParseError);
  CHECK_THROWS_AS(parse_csv("1,0,1\n0,1\n", CsvOptions{2, 0, 1.0}), Error);
  CHECK_THROWS_AS(parse_csv("1,x\n", CsvOptions{2, 0, 1.0}), Error);
}

TEST_CASE("experiment stages write their artifacts") {
  const auto dir = scratch("run");
  const auto cfg = ExperimentConfig::from_json(tiny_run(dir));
  const auto summary = run_experiment(cfg, Mode::run);
  for (const char* name : {"manifest.json", "teacher.ckpt", "supernet.ckpt", "training_log.csv",
                           "probability_table.json", "filter_events.json", "pareto.json", "generations.csv",
                           "pareto_layers.csv"}) {
    CAPTURE(name);
    CHECK(fs::exists(dir / name));
  }
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest["status"] == "ok");
  CHECK(manifest["config_hash"] == cfg.hash());
  CHECK(manifest["seed"] == 5);
  const auto pareto = nlohmann::json::parse(read_file(dir / "pareto.json"));
  CHECK(pareto["config_hash"] == cfg.hash());
  REQUIRE_FALSE(pareto["frontier"].empty());
  for (const auto& p : pareto["frontier"]) CHECK(p["flops_ratio_vs_dense"] <= 0.8);

  const auto log = read_file(dir / "training_log.csv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 11);

  SUBCASE("search alone reuses the trained supernet and reproduces the frontier") {
    const auto before = read_file(dir / "pareto.json");
    run_experiment(cfg, Mode::search);
    CHECK(read_file(dir / "pareto.json") == before);
  }
}

TEST_CASE("failing stage leaves a failed manifest") {
  const auto dir = scratch("fail");
  auto j = tiny_run(dir);
  // Every observed choice falls below a threshold of 1.
  j["filter"]["acc_threshold"] = 1.0;
  j["dataset"]["noise"] = 3.0;
  const auto cfg = ExperimentConfig::from_json(j);
  try {
    run_experiment(cfg, Mode::train_supernet);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "train_supernet");
    CHECK(e.kind() == "filter");
  }
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest["status"] == "failed");
  CHECK(manifest["failed_stage"] == "train_supernet");
  CHECK(fs::exists(dir / "teacher.ckpt"));
}

#ifdef NMSEARCH_CLI
namespace {

int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string("\"") + NMSEARCH_CLI + "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("command line errors are JSON on stderr") {
  const auto dir = scratch("cli");
  CHECK(run_cli("run --config " + (dir / "missing.json").string(), dir / "err1") == 2);
  CHECK(nlohmann::json::parse(read_file(dir / "err1"))["error"]["kind"] == "usage");

  write_file(dir / "bad.json", R"({"schema_version": 1, "seed": 1, "sed": 2})");
  CHECK(run_cli("run --config " + (dir / "bad.json").string(), dir / "err2") == 1);
  const auto err = nlohmann::json::parse(read_file(dir / "err2"));
  CHECK(err["error"]["kind"] == "configuration");
  CHECK(err["error"]["message"].get<std::string>().find("sed") != std::string::npos);

  write_file(dir / "trunc.json", R"({"schema_version": 1, )");
  CHECK(run_cli("run --config " + (dir / "trunc.json").string(), dir / "err3") == 1);
  CHECK(nlohmann::json::parse(read_file(dir / "err3")).contains("error"));
}

TEST_CASE("command line encode and decode") {
  const auto dir = scratch("codec");
  write_file(dir / "w.csv", "1,-3,0.5,2,0,0,7,-8\n0.25,0.5,-0.75,1,4,3,2,1\n");
  REQUIRE(run_cli("encode --in " + (dir / "w.csv").string() + " --level 2:4 --out " + (dir / "w.nms").string(),
                  dir / "err") == 0);
  CHECK(fs::file_size(dir / "w.nms") == 16 + 8 * 4 + 2);
  REQUIRE(run_cli("decode --in " + (dir / "w.nms").string() + " --out " + (dir / "back.csv").string(),
                  dir / "err") == 0);
  CHECK(read_file(dir / "back.csv") == "0,-3,0,2,0,0,7,-8\n0,0,-0.75,1,4,3,0,0\n");

  write_file(dir / "ragged.csv", "1,2,3,4\n1,2\n");
  CHECK(run_cli("encode --in " + (dir / "ragged.csv").string() + " --level 2:4 --out " + (dir / "r.nms").string(),
                dir / "err4") == 1);
  CHECK(nlohmann::json::parse(read_file(dir / "err4"))["error"]["kind"] == "parse");
}
#endif
