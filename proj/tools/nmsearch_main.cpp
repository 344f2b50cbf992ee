// nmsearch command-line front end.
//
//   nmsearch run --config exp.json [--seed S] [--out DIR] [--threads N]
//   nmsearch encode --in weights.csv --level 2:4 --out weights.nms
//   nmsearch decode --in weights.nms [--out weights.csv]
//
// Failures print {"error": {...}} on stderr and exit nonzero.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nmsearch/experiment.hpp"
#include "nmsearch/format.hpp"
#include "nmsearch/nm.hpp"

namespace {

using namespace nmsearch;

struct ExperimentArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

void add_experiment_flags(CLI::App* cmd, ExperimentArgs& args) {
  cmd->add_option("--config", args.config, "experiment JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "override the master seed");
  cmd->add_option("--out", args.out, "override the output directory");
  cmd->add_option("--threads", args.threads, "worker threads for evaluation")->check(CLI::PositiveNumber);
}

int run_mode(Mode mode, const ExperimentArgs& args) {
  ExperimentConfig cfg = ExperimentConfig::load(args.config);
  if (args.seed) cfg.set_seed(*args.seed);
  if (args.out) cfg.output_dir = *args.out;
  if (args.threads) cfg.threads = *args.threads;
  const RunSummary summary = run_experiment(cfg, mode);
  nlohmann::json out = {{"mode", to_string(mode)},
                        {"output_dir", summary.output_dir.string()},
                        {"config_hash", summary.config_hash},
                        {"artifacts", summary.artifacts}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Plain numeric CSV: one matrix row per line.
Matrix<float> parse_matrix(const std::string& text) {
  std::vector<std::vector<float>> rows;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<float> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') throw ParseError(line_no, "not a number: \"" + cell + "\"");
      row.push_back(static_cast<float>(v));
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError(line_no, "ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidInputError("matrix file is empty");
  Matrix<float> m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

std::string matrix_csv(const Matrix<float>& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format9(m(r, c));
    }
    out += '\n';
  }
  return out;
}

int encode_cmd(const std::string& in, const std::string& level_text, const std::string& out) {
  const Matrix<float> weights = parse_matrix(slurp(in));
  const SparseEncoding enc = encode_sparse(weights, SparsityLevel::parse(level_text));
  const auto blob = serialize_encoding(enc);
  std::ofstream file(out, std::ios::binary);
  file.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!file) throw InvalidInputError("failed writing " + out);
  const nlohmann::json summary = {{"rows", enc.rows},
                                  {"cols", enc.cols},
                                  {"level", enc.level.to_string()},
                                  {"values", enc.values.size()},
                                  {"index_bits", enc.level.index_bits()},
                                  {"bytes", blob.size()}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int decode_cmd(const std::string& in, const std::string& out) {
  const std::string bytes = slurp(in);
  const std::vector<std::uint8_t> blob(bytes.begin(), bytes.end());
  const std::string csv = matrix_csv(decode_sparse(deserialize_encoding(blob)));
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream file(out, std::ios::binary);
    file << csv;
    if (!file) throw InvalidInputError("failed writing " + out);
  }
  return 0;
}

void print_error(const std::string& kind, const std::string& message, const std::string* stage) {
  nlohmann::json err = {{"kind", kind}, {"message", message}};
  if (stage) err["stage"] = *stage;
  std::cerr << nlohmann::json{{"error", err}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"N:M sparse supernet training and search"};
  app.require_subcommand(1);

  struct Verb {
    const char* name;
    Mode mode;
    const char* help;
  };
  const std::vector<Verb> verbs = {
      {"pretrain", Mode::pretrain, "train the dense teacher"},
      {"train-supernet", Mode::train_supernet, "train the sparse supernet from the teacher"},
      {"search", Mode::search, "evolutionary search over a trained supernet"},
      {"run", Mode::run, "all stages end to end"},
      {"ablation-sampling", Mode::ablation_sampling, "vanilla vs two-step sampling"},
      {"ablation-filter", Mode::ablation_filter, "training with and without choice filtering"},
      {"compare-er", Mode::compare_er, "searched frontier vs ER-rounded configurations"},
      {"compare-estimator", Mode::compare_estimator, "dense-weight vs supernet accuracy estimator"},
  };
  std::vector<ExperimentArgs> args(verbs.size());
  std::vector<CLI::App*> commands;
  for (std::size_t i = 0; i < verbs.size(); ++i) {
    commands.push_back(app.add_subcommand(verbs[i].name, verbs[i].help));
    add_experiment_flags(commands.back(), args[i]);
  }

  std::string enc_in, enc_level, enc_out;
  auto* encode = app.add_subcommand("encode", "pack a dense CSV matrix into the N:M format");
  encode->add_option("--in", enc_in, "numeric CSV, one row per line")->required()->check(CLI::ExistingFile);
  encode->add_option("--level", enc_level, "sparsity level N:M")->required();
  encode->add_option("--out", enc_out, "output blob")->required();

  std::string dec_in, dec_out;
  auto* decode = app.add_subcommand("decode", "unpack an N:M blob into a dense CSV matrix");
  decode->add_option("--in", dec_in, "input blob")->required()->check(CLI::ExistingFile);
  decode->add_option("--out", dec_out, "output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what(), nullptr);
    return 2;
  }

  try {
    if (encode->parsed()) return encode_cmd(enc_in, enc_level, enc_out);
    if (decode->parsed()) return decode_cmd(dec_in, dec_out);
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      if (commands[i]->parsed()) return run_mode(verbs[i].mode, args[i]);
    }
  } catch (const StageError& e) {
    print_error(e.kind(), e.what(), &e.stage());
    return 1;
  } catch (const Error& e) {
    print_error(e.kind(), e.what(), nullptr);
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what(), nullptr);
    return 1;
  }
  return 1;
}
