#pragma once

#include <cmath>
#include <vector>

#include "reghorizon/tensor.hpp"

namespace reghorizon {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long t = 0;

  static AdamState init(const std::vector<Tensor>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
      s.m.emplace_back(p.values.size(), 0.0);
      s.v.emplace_back(p.values.size(), 0.0);
    }
    return s;
  }
};

// One bias-corrected Adam update in place.
inline void adam_step(std::vector<Tensor>& params,
                      const std::vector<std::vector<double>>& grads, AdamState& state,
                      double lr, const AdamConfig& cfg = {}) {
  if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: param/grad/state count mismatch");
  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].values.size() != grads[i].size())
      throw std::invalid_argument("adam_step: shape mismatch");
    auto& p = params[i].values;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t k = 0; k < p.size(); ++k) {
      double gk = grads[i][k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace reghorizon
