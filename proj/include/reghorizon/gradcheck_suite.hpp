#pragma once

#include <string>
#include <vector>

#include "reghorizon/data.hpp"
#include "reghorizon/graph.hpp"
#include "reghorizon/losses.hpp"
#include "reghorizon/model.hpp"

namespace reghorizon {

struct GradCheckEntry {
  std::string name;
  double error = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

namespace gradcheck {

inline Tensor random_tensor(std::vector<int> shape, const RngStream& rng, uint64_t counter,
                            double amplitude = 1.5) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (size_t i = 0; i < t.values.size(); ++i)
    t.values[i] = amplitude * (2.0 * rng.uniform(counter, i) - 1.0);
  return t;
}

using LeafFn = std::function<Var(Graph&, std::vector<Var>&)>;

inline GradCheckEntry run_case(const std::string& name, const LeafFn& f,
                               std::vector<Tensor> leaves, double tol = 1e-4) {
  GradCheckEntry e;
  e.name = name;
  e.tolerance = tol;
  e.error = check_gradients(f, std::move(leaves), 1e-5);
  e.pass = e.error <= tol;
  return e;
}

// Every graph primitive, each reduced to a scalar via a fixed weighted sum so
// all output elements contribute to the checked gradient.
inline std::vector<GradCheckEntry> primitive_cases() {
  RngStream rng(42, 7);
  auto weighted_sum = [](Graph& g, Var x) {
    Tensor w = Tensor::zeros(x.val().shape);
    for (size_t i = 0; i < w.values.size(); ++i) w.values[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return sum_all(mul(x, g.constant(w)));
  };
  std::vector<GradCheckEntry> out;
  out.push_back(run_case(
      "matmul",
      [&](Graph& g, std::vector<Var>& v) { return weighted_sum(g, matmul(v[0], v[1])); },
      {random_tensor({4, 5}, rng, 0), random_tensor({5, 3}, rng, 1)}));
  out.push_back(run_case(
      "matmul_nt",
      [&](Graph& g, std::vector<Var>& v) { return weighted_sum(g, matmul_nt(v[0], v[1])); },
      {random_tensor({4, 5}, rng, 2), random_tensor({6, 5}, rng, 3)}));
  out.push_back(run_case(
      "add",
      [&](Graph& g, std::vector<Var>& v) { return weighted_sum(g, add(v[0], v[1])); },
      {random_tensor({3, 4}, rng, 4), random_tensor({3, 4}, rng, 5)}));
  out.push_back(run_case(
      "mul",
      [&](Graph& g, std::vector<Var>& v) { return weighted_sum(g, mul(v[0], v[1])); },
      {random_tensor({3, 4}, rng, 6), random_tensor({3, 4}, rng, 7)}));
  out.push_back(run_case(
      "add_rowvec",
      [&](Graph& g, std::vector<Var>& v) { return weighted_sum(g, add_rowvec(v[0], v[1])); },
      {random_tensor({3, 4}, rng, 8), random_tensor({4}, rng, 9)}));
  out.push_back(run_case(
      "layer_norm",
      [&](Graph& g, std::vector<Var>& v) {
        return weighted_sum(g, layer_norm(v[0], v[1], v[2]));
      },
      {random_tensor({3, 6}, rng, 10), random_tensor({6}, rng, 11),
       random_tensor({6}, rng, 12)}));
  out.push_back(run_case(
      "embedding",
      [&](Graph& g, std::vector<Var>& v) {
        return weighted_sum(g, embedding(v[0], {1, 0, 3, 1}));
      },
      {random_tensor({5, 4}, rng, 13)}));
  out.push_back(run_case(
      "softmax",
      [&](Graph& g, std::vector<Var>& v) { return weighted_sum(g, softmax_lastdim(v[0])); },
      {random_tensor({3, 5}, rng, 14)}));
  out.push_back(run_case(
      "dropout_fixed_mask",
      [&](Graph& g, std::vector<Var>& v) {
        return weighted_sum(g, dropout(v[0], 0.4, RngStream(9, 9), 0));
      },
      {random_tensor({4, 5}, rng, 15)}));
  out.push_back(run_case(
      "conv1d",
      [&](Graph& g, std::vector<Var>& v) {
        return weighted_sum(g, conv1d(v[0], v[1], v[2], 3, 2));
      },
      {random_tensor({6, 3}, rng, 16), random_tensor({9, 4}, rng, 17),
       random_tensor({4}, rng, 18)}));
  out.push_back(run_case(
      "relu",
      [&](Graph& g, std::vector<Var>& v) { return weighted_sum(g, relu(v[0])); },
      {random_tensor({3, 4}, rng, 19)}));
  out.push_back(run_case(
      "cross_entropy",
      [&](Graph& g, std::vector<Var>& v) {
        return cross_entropy(v[0], {1, 0, 2}, {1.0, 1.0, 1.0});
      },
      {random_tensor({3, 4}, rng, 20)}));
  out.push_back(run_case(
      "distance_mse",
      [&](Graph& g, std::vector<Var>& v) {
        return distance(DistanceMetric::MSE, v[0], v[1], {1.0, 1.0, 1.0});
      },
      {random_tensor({3, 4}, rng, 21), random_tensor({3, 4}, rng, 22)}));
  out.push_back(run_case(
      "distance_cos",
      [&](Graph& g, std::vector<Var>& v) {
        return distance(DistanceMetric::COS, v[0], v[1], {1.0, 1.0, 1.0});
      },
      {random_tensor({3, 4}, rng, 23), random_tensor({3, 4}, rng, 24)}));
  out.push_back(run_case(
      "distance_kl",
      [&](Graph& g, std::vector<Var>& v) {
        Var p = softmax_lastdim(v[0]);
        Var q = softmax_lastdim(v[1]);
        return distance(DistanceMetric::KL, p, q, {1.0, 1.0});
      },
      {random_tensor({2, 4}, rng, 25), random_tensor({2, 4}, rng, 26)}));
  return out;
}

struct TotalLossFixture {
  ModelConfig model_config;
  Model model;
  Batch batch;

  static TotalLossFixture make() {
    TotalLossFixture f;
    CorpusSpec cs;
    cs.vocab_size = 11;
    cs.min_len = 2;
    cs.max_len = 3;
    cs.size = 2;
    cs.frames_per_token = 2;
    cs.frame_dim = 6;
    cs.noise_sigma = 0.05;
    cs.task = Task::SHIFT_MAP;
    cs.seed = 5;
    Corpus corpus = generate(cs);
    f.batch = make_batches(corpus.triples, 64)[0];
    f.model_config.vocab_size = cs.vocab_size;
    f.model_config.d_model = 8;
    f.model_config.n_heads = 2;
    f.model_config.enc_layers = 1;
    f.model_config.dec_layers = 1;
    f.model_config.ffn_dim = 16;
    f.model_config.dropout = 0.1;
    f.model_config.frame_dim = cs.frame_dim;
    f.model_config.subsample_stride = 2;
    f.model = build_model(f.model_config, RngStream(11, 0));
    return f;
  }
};

// The legal tap x metric combinations: every tap under MSE and COS, plus KL
// at the softmax tap.
inline std::vector<std::pair<TapPoint, DistanceMetric>> legal_combos() {
  std::vector<std::pair<TapPoint, DistanceMetric>> combos;
  for (TapPoint tap : {TapPoint::ENC, TapPoint::XATTN, TapPoint::LDS, TapPoint::LOGITS,
                       TapPoint::SOFTMAX})
    for (DistanceMetric m : {DistanceMetric::MSE, DistanceMetric::COS})
      combos.emplace_back(tap, m);
  combos.emplace_back(TapPoint::SOFTMAX, DistanceMetric::KL);
  return combos;
}

// total_loss gradient checks over all legal combos on a 2-sample batch.
inline std::vector<GradCheckEntry> total_loss_cases() {
  TotalLossFixture fx = TotalLossFixture::make();
  std::vector<GradCheckEntry> out;
  for (auto [tap, metric] : legal_combos()) {
    LossWeights w;
    w.alpha_t = 0.7;
    w.alpha_cr = 0.5;
    w.alpha_rd = 0.8;
    w.cr_tap = tap;
    w.cr_metric = metric;
    w.rd_tap = tap;
    w.rd_metric = metric;
    auto fn = [&fx, w](Graph& g, std::vector<Var>& vars) {
      BoundModel bm;
      bm.model = &fx.model;
      bm.graph = &g;
      bm.vars = vars;
      return total_loss(w, fx.batch, bm, RngStream(77, 0)).total;
    };
    out.push_back(run_case("total_loss/" + tap_name(tap) + "-" + metric_name(metric), fn,
                           fx.model.params));
  }
  return out;
}

// A deliberately wrong backward; the harness must flag it. Reported as a
// pass when the measured error is large.
inline GradCheckEntry injected_bug_case() {
  RngStream rng(3, 3);
  auto fn = [](Graph& g, std::vector<Var>& v) {
    Tensor out = v[0].val();
    for (double& x : out.values) x = x * x;
    int ix = v[0].id;
    Graph* gp = &g;
    Var y = make_op(g, std::move(out), [ix, gp](Adjoints& adj, int self) {
      const auto& x = gp->value(ix).values;
      for (size_t i = 0; i < adj[self].size(); ++i)
        adj[ix][i] += adj[self][i] * 1.7 * x[i];  // should be 2x
    });
    return sum_all(y);
  };
  GradCheckEntry e;
  e.name = "harness_detects_injected_bug";
  e.tolerance = 1e-4;
  e.error = check_gradients(fn, {random_tensor({2, 3}, rng, 0)}, 1e-5);
  e.pass = e.error > 1e-2;
  return e;
}

inline std::vector<GradCheckEntry> full_suite() {
  std::vector<GradCheckEntry> all = primitive_cases();
  for (auto& e : total_loss_cases()) all.push_back(std::move(e));
  all.push_back(injected_bug_case());
  return all;
}

}  // namespace gradcheck
}  // namespace reghorizon
