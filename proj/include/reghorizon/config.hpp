#pragma once

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reghorizon/data.hpp"
#include "reghorizon/horizon.hpp"
#include "reghorizon/model.hpp"
#include "reghorizon/trainer.hpp"

namespace reghorizon {

// One JSON document drives every command; CLI overrides are dotted paths
// into it (e.g. train.dropout=0.05).
struct ExperimentConfig {
  CorpusSpec corpus;
  ModelConfig model;
  TrainConfig train;
  bool has_sweep = false;
  SweepSpec sweep;
  std::string output_dir = "out";
  std::string config_hash;
};

namespace detail {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline LossWeights parse_weights(const nlohmann::json& j) {
  LossWeights w;
  maybe(j, "alpha_t", w.alpha_t);
  maybe(j, "alpha_cr", w.alpha_cr);
  maybe(j, "alpha_rd", w.alpha_rd);
  if (j.contains("cr_tap")) w.cr_tap = tap_from_name(j.at("cr_tap").get<std::string>());
  if (j.contains("cr_metric")) w.cr_metric = metric_from_name(j.at("cr_metric").get<std::string>());
  if (j.contains("rd_tap")) w.rd_tap = tap_from_name(j.at("rd_tap").get<std::string>());
  if (j.contains("rd_metric")) w.rd_metric = metric_from_name(j.at("rd_metric").get<std::string>());
  return w;
}

inline TrainConfig parse_train(const nlohmann::json& j) {
  TrainConfig t;
  t.weights = parse_weights(j);
  maybe(j, "dropout", t.dropout);
  maybe(j, "max_lr", t.max_lr);
  maybe(j, "warmup_steps", t.warmup_steps);
  maybe(j, "max_steps", t.max_steps);
  maybe(j, "patience", t.patience);
  maybe(j, "eval_every", t.eval_every);
  maybe(j, "max_tokens", t.max_tokens);
  maybe(j, "mt_warmup_steps", t.mt_warmup_steps);
  maybe(j, "seed", t.seed);
  return t;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(nlohmann::json j) {
  ExperimentConfig cfg;
  cfg.config_hash = hex64(fnv1a(j.dump()));
  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    detail::maybe(c, "vocab_size", cfg.corpus.vocab_size);
    detail::maybe(c, "min_len", cfg.corpus.min_len);
    detail::maybe(c, "max_len", cfg.corpus.max_len);
    detail::maybe(c, "size", cfg.corpus.size);
    detail::maybe(c, "frames_per_token", cfg.corpus.frames_per_token);
    detail::maybe(c, "frame_dim", cfg.corpus.frame_dim);
    detail::maybe(c, "noise_sigma", cfg.corpus.noise_sigma);
    detail::maybe(c, "shift", cfg.corpus.shift);
    detail::maybe(c, "seed", cfg.corpus.seed);
    if (c.contains("task")) cfg.corpus.task = task_from_name(c.at("task").get<std::string>());
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::maybe(m, "d_model", cfg.model.d_model);
    detail::maybe(m, "n_heads", cfg.model.n_heads);
    detail::maybe(m, "enc_layers", cfg.model.enc_layers);
    detail::maybe(m, "dec_layers", cfg.model.dec_layers);
    detail::maybe(m, "ffn_dim", cfg.model.ffn_dim);
    detail::maybe(m, "subsample_stride", cfg.model.subsample_stride);
    detail::maybe(m, "conv_kernel", cfg.model.conv_kernel);
  }
  // the model consumes exactly what the corpus emits
  cfg.model.vocab_size = cfg.corpus.vocab_size;
  cfg.model.frame_dim = cfg.corpus.frame_dim;
  if (j.contains("train")) cfg.train = detail::parse_train(j.at("train"));
  if (j.contains("sweep")) {
    cfg.has_sweep = true;
    cfg.sweep.base = cfg.train;
    const auto& s = j.at("sweep");
    if (s.contains("axes"))
      for (const auto& [name, values] : s.at("axes").items())
        cfg.sweep.axes.emplace_back(name, values.get<std::vector<double>>());
    if (s.contains("seeds")) cfg.sweep.seeds = s.at("seeds").get<std::vector<uint64_t>>();
  }
  detail::maybe(j, "output_dir", cfg.output_dir);

  // CI seed override
  if (const char* env = std::getenv("REGHORIZON_SEED")) {
    uint64_t s = std::stoull(env);
    cfg.corpus.seed = s;
    cfg.train.seed = s;
    cfg.sweep.base.seed = s;
    cfg.sweep.seeds = {s};
  }
  cfg.corpus.validate();
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

// Applies "a.b.c=value" overrides onto the raw JSON document.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw config_error("override must look like path=value");
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  nlohmann::json* cur = &j;
  size_t pos = 0;
  while (true) {
    size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, /*allow_exceptions=*/false);
      (*cur)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    cur = &(*cur)[key];
    pos = dot + 1;
  }
}

inline nlohmann::json load_config_json(const std::string& path,
                                       const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  for (const std::string& o : overrides) apply_override(j, o);
  return j;
}

}  // namespace reghorizon
