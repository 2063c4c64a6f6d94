#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reghorizon/adam.hpp"
#include "reghorizon/data.hpp"
#include "reghorizon/losses.hpp"
#include "reghorizon/model.hpp"

namespace reghorizon {

struct TrainConfig {
  LossWeights weights;
  double dropout = 0.1;  // the d/o knob; overrides the model config
  double max_lr = 1e-3;
  int warmup_steps = 200;
  int max_steps = 5000;
  int patience = 10;
  int eval_every = 100;
  int max_tokens = 256;
  int mt_warmup_steps = 0;  // optional MT-only warm start, off by default
  uint64_t seed = 1;

  void validate() const {
    weights.validate();
    if (warmup_steps < 1) throw config_error("train: warmup_steps must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("train: dropout must be in [0,1)");
    if (patience < 1) throw config_error("train: patience must be >= 1");
    if (max_steps < 1 || eval_every < 1 || max_tokens < 1 || max_lr <= 0.0)
      throw config_error("train: bad step/lr settings");
  }

  std::string canonical_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "at=" << weights.alpha_t << ";acr=" << weights.alpha_cr
       << ";ard=" << weights.alpha_rd << ";crt=" << tap_name(weights.cr_tap)
       << ";crm=" << metric_name(weights.cr_metric) << ";rdt=" << tap_name(weights.rd_tap)
       << ";rdm=" << metric_name(weights.rd_metric) << ";do=" << dropout
       << ";lr=" << max_lr << ";wu=" << warmup_steps << ";ms=" << max_steps
       << ";pat=" << patience << ";ev=" << eval_every << ";mt=" << max_tokens
       << ";mtw=" << mt_warmup_steps << ";seed=" << seed;
    return os.str();
  }
  std::string hash() const { return hex64(fnv1a(canonical_string())); }
};

struct RunRecord {
  double alpha_cr = 0, alpha_rd = 0, alpha_t = 0, dropout = 0;
  double dev_metric = 0, test_metric = 0;
  std::vector<std::pair<int, double>> curve;
  uint64_t seed = 0;
  std::string config_hash;
  bool failed = false;
};

inline nlohmann::json run_record_to_json(const RunRecord& r) {
  return {{"alpha_cr", r.alpha_cr},   {"alpha_rd", r.alpha_rd},
          {"alpha_t", r.alpha_t},     {"dropout", r.dropout},
          {"dev_metric", r.dev_metric}, {"test_metric", r.test_metric},
          {"seed", r.seed},           {"failed", r.failed},
          {"config_hash", r.config_hash}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.alpha_cr = j.at("alpha_cr").get<double>();
  r.alpha_rd = j.at("alpha_rd").get<double>();
  r.alpha_t = j.at("alpha_t").get<double>();
  r.dropout = j.at("dropout").get<double>();
  r.dev_metric = j.at("dev_metric").get<double>();
  r.test_metric = j.at("test_metric").get<double>();
  r.seed = j.value("seed", uint64_t{0});
  r.failed = j.value("failed", false);
  r.config_hash = j.value("config_hash", std::string());
  return r;
}

// inverse-square-root schedule with linear warmup; peaks at max_lr
inline double lr_at(int step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  double s = static_cast<double>(step), w = static_cast<double>(cfg.warmup_steps);
  return cfg.max_lr * std::min(s / w, std::sqrt(w / s));
}

struct EvalResult {
  double token_accuracy = 0.0;
  double exact_match = 0.0;
};

// Greedy-decodes every item; token accuracy counts positions up to the
// shorter sequence as right/wrong and every length-mismatch position as
// wrong; exact match is the fraction of perfect sequences.
inline EvalResult evaluate(const Model& model, const std::vector<Triple>& split,
                           int extra_len = 4) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  long correct = 0, total = 0, exact = 0;
  for (const Triple& t : split) {
    int max_len = static_cast<int>(t.target_ids.size()) + extra_len;
    std::vector<int> hyp = greedy_decode(model, t.speech_frames, max_len);
    size_t lr = t.target_ids.size(), lh = hyp.size();
    size_t lmin = std::min(lr, lh);
    for (size_t i = 0; i < lmin; ++i)
      if (hyp[i] == t.target_ids[i]) ++correct;
    total += static_cast<long>(std::max(lr, lh));
    if (hyp == t.target_ids) ++exact;
  }
  EvalResult r;
  r.token_accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / total;
  r.exact_match = static_cast<double>(exact) / split.size();
  return r;
}

namespace detail {

inline std::vector<int> epoch_order(size_t n, const RngStream& rng, uint64_t epoch) {
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  for (size_t i = n; i > 1; --i) {
    size_t j = rng.below(epoch, i, i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace detail

struct TrainResult {
  RunRecord record;
  Model model;
};

// One deterministic training run: Adam + inverse-sqrt schedule, periodic dev
// evaluation with early stopping, final model = average of the last up-to-10
// retained checkpoints.
inline TrainResult train_run(const ModelConfig& model_config, const Corpus& corpus,
                             const TrainConfig& cfg) {
  cfg.validate();
  ModelConfig mcfg = model_config;
  mcfg.dropout = cfg.dropout;
  Model model = build_model(mcfg, RngStream(cfg.seed, 100));
  auto train_split = corpus.train();
  auto dev_split = corpus.dev();
  auto test_split = corpus.test();
  if (train_split.empty() || dev_split.empty() || test_split.empty())
    throw data_error("train_run: corpus splits must be non-empty");
  std::vector<Batch> batches = make_batches(train_split, cfg.max_tokens);

  AdamState adam = AdamState::init(model.params);
  RngStream shuffle_rng(cfg.seed, 200);
  RngStream step_rng(cfg.seed, 300);

  RunRecord rec;
  rec.alpha_cr = cfg.weights.alpha_cr;
  rec.alpha_rd = cfg.weights.alpha_rd;
  rec.alpha_t = cfg.weights.alpha_t;
  rec.dropout = cfg.dropout;
  rec.seed = cfg.seed;
  rec.config_hash = cfg.hash();

  std::deque<std::vector<Tensor>> retained;  // last up-to-10 checkpoints
  double best_dev = -1.0;
  int evals_since_best = 0;
  uint64_t epoch = 0;
  std::vector<int> order = detail::epoch_order(batches.size(), shuffle_rng, epoch);
  size_t cursor = 0;

  LossWeights mt_only;
  mt_only.alpha_t = 1.0;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    if (cursor >= order.size()) {
      ++epoch;
      order = detail::epoch_order(batches.size(), shuffle_rng, epoch);
      cursor = 0;
    }
    const Batch& batch = batches[static_cast<size_t>(order[cursor++])];

    Graph g;
    BoundModel bm = bind(model, g);
    Var loss_var;
    try {
      if (step <= cfg.mt_warmup_steps) {
        TapBundle text = forward_text(bm, batch, step_rng.substream(static_cast<uint64_t>(step)),
                                      /*dropout_on=*/true);
        loss_var = ce_loss(text, batch);
      } else {
        LossBreakdown lb = total_loss(cfg.weights, batch, bm,
                                      step_rng.substream(static_cast<uint64_t>(step)));
        loss_var = lb.total;
      }
    } catch (const numeric_error&) {
      // a diverged run is a data point (failed), not a crash
      rec.failed = true;
      if (rec.curve.empty()) rec.curve.emplace_back(step, 0.0);
      return {rec, std::move(model)};
    }
    double loss = loss_var.val().values[0];
    if (!std::isfinite(loss)) {
      rec.failed = true;
      if (rec.curve.empty()) rec.curve.emplace_back(step, 0.0);
      return {rec, std::move(model)};
    }
    g.backward(loss_var);
    std::vector<std::vector<double>> grads;
    grads.reserve(bm.vars.size());
    for (Var v : bm.vars) grads.push_back(v.grad());
    adam_step(model.params, grads, adam, lr_at(step, cfg));

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      EvalResult dev = evaluate(model, dev_split);
      rec.curve.emplace_back(step, dev.token_accuracy);
      retained.push_back(model.params);
      if (retained.size() > 10) retained.pop_front();
      if (dev.token_accuracy > best_dev) {
        best_dev = dev.token_accuracy;
        evals_since_best = 0;
      } else {
        ++evals_since_best;
      }
      if (evals_since_best >= cfg.patience) break;
    }
  }

  // checkpoint averaging
  if (!retained.empty()) {
    std::vector<Tensor> avg = retained.front();
    for (size_t ci = 1; ci < retained.size(); ++ci)
      for (size_t p = 0; p < avg.size(); ++p)
        for (size_t k = 0; k < avg[p].values.size(); ++k)
          avg[p].values[k] += retained[ci][p].values[k];
    for (auto& t : avg)
      for (double& v : t.values) v /= static_cast<double>(retained.size());
    model.params = std::move(avg);
  }

  EvalResult dev = evaluate(model, dev_split);
  EvalResult test = evaluate(model, test_split);
  rec.dev_metric = dev.token_accuracy;
  rec.test_metric = test.token_accuracy;
  if (rec.curve.empty()) rec.curve.emplace_back(cfg.max_steps, rec.dev_metric);
  return {rec, std::move(model)};
}

}  // namespace reghorizon
