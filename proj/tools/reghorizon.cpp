// reghorizon: generate corpora, train, sweep, and run the total-regularization
// analysis from one JSON experiment config.
//
// Exit codes: 0 ok, 1 usage/config error, 2 numeric failure, 3 insufficient data.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "reghorizon/config.hpp"
#include "reghorizon/data.hpp"
#include "reghorizon/gradcheck_suite.hpp"
#include "reghorizon/horizon.hpp"
#include "reghorizon/model.hpp"
#include "reghorizon/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reghorizon;

namespace {

ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides) {
  return parse_experiment_config(load_config_json(path, overrides));
}

int cmd_gen(const std::string& config_path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = load_experiment(config_path, overrides);
  fs::create_directories(cfg.output_dir);
  Corpus corpus = generate(cfg.corpus);
  {
    std::ofstream os(cfg.output_dir + "/corpus.jsonl");
    write_corpus_jsonl(corpus, os);
  }
  json manifest = {{"config_hash", cfg.config_hash},
                   {"size", cfg.corpus.size},
                   {"vocab_size", cfg.corpus.vocab_size},
                   {"task", task_name(cfg.corpus.task)},
                   {"seed", cfg.corpus.seed},
                   {"train", corpus.train_idx.size()},
                   {"dev", corpus.dev_idx.size()},
                   {"test", corpus.test_idx.size()}};
  std::ofstream ms(cfg.output_dir + "/corpus.manifest.json");
  ms << manifest.dump(2) << "\n";
  std::cout << "wrote " << corpus.triples.size() << " triples to " << cfg.output_dir
            << "/corpus.jsonl\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = load_experiment(config_path, overrides);
  fs::create_directories(cfg.output_dir);
  Corpus corpus = generate(cfg.corpus);
  TrainResult result = train_run(cfg.model, corpus, cfg.train);
  {
    std::ofstream os(cfg.output_dir + "/run.jsonl");
    os << run_record_to_json(result.record).dump() << "\n";
  }
  save_checkpoint(result.model, cfg.output_dir + "/checkpoint.json", cfg.config_hash);
  std::cout << "dev " << result.record.dev_metric << " test " << result.record.test_metric
            << (result.record.failed ? " FAILED" : "") << "\n";
  return result.record.failed ? 2 : 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              int workers) {
  ExperimentConfig cfg = load_experiment(config_path, overrides);
  if (!cfg.has_sweep) throw config_error("config has no sweep section");
  fs::create_directories(cfg.output_dir);
  std::string results_path = cfg.output_dir + "/results.jsonl";

  // resume: skip configs whose hash already has a line
  std::set<std::string> done;
  std::vector<json> existing;
  if (fs::exists(results_path)) {
    std::ifstream is(results_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      done.insert(j.value("config_hash", ""));
      existing.push_back(std::move(j));
    }
  }

  std::vector<TrainConfig> grid = expand_grid(cfg.sweep);
  std::vector<TrainConfig> pending;
  for (const TrainConfig& t : grid)
    if (!done.count(t.hash())) pending.push_back(t);
  std::cout << "grid " << grid.size() << " runs, " << pending.size() << " pending\n";

  Corpus corpus = generate(cfg.corpus);
  std::vector<RunRecord> records(pending.size());
  std::atomic<size_t> next{0};
  std::atomic<int> succeeded{0};
  auto worker = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      try {
        records[i] = train_run(cfg.model, corpus, pending[i]).record;
        if (!records[i].failed) succeeded.fetch_add(1);
      } catch (const std::exception& e) {
        records[i].failed = true;
        records[i].config_hash = pending[i].hash();
        records[i].alpha_cr = pending[i].weights.alpha_cr;
        records[i].alpha_rd = pending[i].weights.alpha_rd;
        records[i].alpha_t = pending[i].weights.alpha_t;
        records[i].dropout = pending[i].dropout;
        records[i].seed = pending[i].seed;
      }
    }
  };
  int n_threads = std::max(1, workers);
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ofstream os(results_path);
  for (const json& j : existing) os << j.dump() << "\n";
  for (const RunRecord& r : records) os << run_record_to_json(r).dump() << "\n";
  int ok = succeeded.load() + static_cast<int>(existing.size());
  std::cout << "results: " << results_path << " (" << existing.size() + records.size()
            << " lines)\n";
  return ok >= 1 ? 0 : 2;
}

std::vector<RunRecord> read_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open results file: " + path);
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(run_record_from_json(json::parse(line)));
  }
  return out;
}

int cmd_analyze(const std::string& results_path, const std::string& out_dir,
                const std::string& family) {
  std::vector<RunRecord> records = read_records(results_path);
  AnalyzeResult result;
  try {
    result = analyze_records(records, family);
  } catch (const analysis_error& e) {
    std::cerr << e.what() << "\n";
    return 3;
  }
  fs::create_directories(out_dir);
  {
    std::ofstream os(out_dir + "/fit_report.json");
    os << result.fit.report().dump(2) << "\n";
  }
  {
    std::ofstream os(out_dir + "/collapse.csv");
    write_collapse_csv(result.collapse, os);
  }
  std::cout << "fit over " << result.fit.n_points << " points (residual rms "
            << result.fit.residual_rms << ")\n"
            << result.fit.report().dump(2) << "\n";
  return 0;
}

std::vector<double> read_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open scores file: " + path);
  std::vector<double> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out.push_back(j.is_number() ? j.get<double>() : j.at("metric").get<double>());
  }
  return out;
}

int cmd_bootstrap(const std::string& path_a, const std::string& path_b, int resamples,
                  uint64_t seed) {
  std::vector<double> a = read_scores(path_a);
  std::vector<double> b = read_scores(path_b);
  double p = paired_bootstrap(a, b, resamples, seed);
  json report = {{"p_value", p}, {"n_items", a.size()}, {"n_resamples", resamples}, {"seed", seed}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_checkgrad() {
  auto suite = gradcheck::full_suite();
  bool all_pass = true;
  std::printf("%-36s %12s %10s  %s\n", "check", "max rel err", "tolerance", "status");
  for (const auto& e : suite) {
    std::printf("%-36s %12.3e %10.0e  %s\n", e.name.c_str(), e.error, e.tolerance,
                e.pass ? "pass" : "FAIL");
    all_pass = all_pass && e.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"consistency-training regularization laboratory"};
  app.require_subcommand(1);

  std::string config_path, results_path, out_dir = "out", family;
  std::string boot_a, boot_b;
  std::vector<std::string> overrides;
  int workers = 1, resamples = 10000;
  uint64_t boot_seed = 1;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "experiment config JSON")->required();
    sub->add_option("--set", overrides, "dotted config overrides, e.g. train.dropout=0.05");
  };
  add_config(app.add_subcommand("gen", "generate the synthetic corpus"));
  add_config(app.add_subcommand("train", "run one training run"));
  auto* sweep = app.add_subcommand("sweep", "run the hyperparameter sweep (resumable)");
  add_config(sweep);
  sweep->add_option("--workers", workers, "parallel runs");
  auto* analyze = app.add_subcommand("analyze", "fit the total-regularization model");
  analyze->add_option("results", results_path, "RunRecord JSONL")->required();
  analyze->add_option("--out", out_dir, "output directory");
  analyze->add_option("--family", family, "restrict the fit to one tuned family");
  auto* bootstrap = app.add_subcommand("bootstrap", "paired bootstrap significance test");
  bootstrap->add_option("a", boot_a, "per-item scores JSONL (system A)")->required();
  bootstrap->add_option("b", boot_b, "per-item scores JSONL (system B)")->required();
  bootstrap->add_option("--resamples", resamples, "bootstrap resamples");
  bootstrap->add_option("--seed", boot_seed, "bootstrap seed");
  app.add_subcommand("checkgrad", "gradient self-test over all primitives and losses");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen")) return cmd_gen(config_path, overrides);
    if (app.got_subcommand("train")) return cmd_train(config_path, overrides);
    if (app.got_subcommand("sweep")) return cmd_sweep(config_path, overrides, workers);
    if (app.got_subcommand("analyze")) return cmd_analyze(results_path, out_dir, family);
    if (app.got_subcommand("bootstrap"))
      return cmd_bootstrap(boot_a, boot_b, resamples, boot_seed);
    if (app.got_subcommand("checkgrad")) return cmd_checkgrad();
  } catch (const numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const analysis_error& e) {
    std::cerr << "analysis error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
