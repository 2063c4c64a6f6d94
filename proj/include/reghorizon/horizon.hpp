#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reghorizon/tensor.hpp"
#include "reghorizon/trainer.hpp"

namespace reghorizon {

// One-axis-at-a-time sweep around a base configuration, crossed with the
// dropout values and seeds.
struct SweepSpec {
  TrainConfig base;
  // axis name in {alpha_cr, alpha_rd, alpha_t, dropout} -> value list
  std::vector<std::pair<std::string, std::vector<double>>> axes;
  std::vector<uint64_t> seeds = {1};

  void validate() const {
    if (axes.empty()) throw config_error("sweep: at least one axis required");
    if (seeds.empty()) throw config_error("sweep: at least one seed required");
    for (const auto& [name, values] : axes) {
      if (name != "alpha_cr" && name != "alpha_rd" && name != "alpha_t" && name != "dropout")
        throw config_error("sweep: unknown axis " + name);
      if (values.empty()) throw config_error("sweep: empty axis " + name);
      for (double v : values)
        if (!std::isfinite(v) || v < 0.0)
          throw config_error("sweep: axis values must be finite and non-negative");
    }
  }
};

namespace detail {

inline void set_knob(TrainConfig& cfg, const std::string& name, double v) {
  if (name == "alpha_cr")
    cfg.weights.alpha_cr = v;
  else if (name == "alpha_rd")
    cfg.weights.alpha_rd = v;
  else if (name == "alpha_t")
    cfg.weights.alpha_t = v;
  else if (name == "dropout")
    cfg.dropout = v;
  else
    throw config_error("sweep: unknown knob " + name);
}

inline std::array<double, 4> knob_tuple(const TrainConfig& cfg) {
  return {cfg.weights.alpha_cr, cfg.weights.alpha_rd, cfg.weights.alpha_t, cfg.dropout};
}

}  // namespace detail

// Expands the sweep: each non-dropout axis value is crossed with every
// dropout value (others held at base), deduplicated on the hyperparameter
// tuple, then crossed with seeds. Deterministic order.
inline std::vector<TrainConfig> expand_grid(const SweepSpec& spec) {
  spec.validate();
  std::vector<double> dropouts = {spec.base.dropout};
  for (const auto& [name, values] : spec.axes)
    if (name == "dropout") dropouts = values;

  std::vector<TrainConfig> points;
  std::set<std::array<double, 4>> seen;
  auto push = [&](TrainConfig cfg) {
    if (seen.insert(detail::knob_tuple(cfg)).second) points.push_back(std::move(cfg));
  };
  bool any_alpha_axis = false;
  for (const auto& [name, values] : spec.axes) {
    if (name == "dropout") continue;
    any_alpha_axis = true;
    for (double v : values)
      for (double d : dropouts) {
        TrainConfig cfg = spec.base;
        detail::set_knob(cfg, name, v);
        detail::set_knob(cfg, "dropout", d);
        push(std::move(cfg));
      }
  }
  if (!any_alpha_axis)
    for (double d : dropouts) {
      TrainConfig cfg = spec.base;
      detail::set_knob(cfg, "dropout", d);
      push(std::move(cfg));
    }

  std::vector<TrainConfig> out;
  out.reserve(points.size() * spec.seeds.size());
  for (const TrainConfig& p : points)
    for (uint64_t s : spec.seeds) {
      TrainConfig cfg = p;
      cfg.seed = s;
      out.push_back(std::move(cfg));
    }
  return out;
}

// Points strictly after the metric peak of a dropout-sorted series; ties on
// the max break toward the smallest dropout.
inline std::vector<std::pair<double, double>> select_over_regularized(
    std::vector<std::pair<double, double>> series) {
  if (series.size() < 2)
    throw std::invalid_argument("select_over_regularized: need >= 2 points");
  std::sort(series.begin(), series.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  size_t argmax = 0;
  for (size_t i = 1; i < series.size(); ++i)
    if (series[i].second > series[argmax].second) argmax = i;
  return {series.begin() + static_cast<long>(argmax) + 1, series.end()};
}

// The fitted linear total-regularization model under the paper-style
// normalizations beta_R = -1 and R(0,0,1,0) = 0 (hence beta_f = -beta_t).
struct RegressionFit {
  double beta_cr = 0, beta_rd = 0, beta_t = 0, beta_do = 0, beta_f = 0, beta_B = 0;
  double beta_R = -1.0;
  int n_points = 0;
  double residual_rms = 0;
  // estimated OLS standard errors in column order (cr, rd, t, do, intercept)
  std::array<double, 5> std_errors{};

  nlohmann::json report() const {
    return {{"beta_cr", beta_cr}, {"beta_rd", beta_rd}, {"beta_t", beta_t},
            {"beta_do", beta_do}, {"beta_f", beta_f},   {"beta_B", beta_B},
            {"residual_rms", residual_rms}, {"n_points", n_points}};
  }
};

namespace detail {

// Jacobi eigendecomposition of a small symmetric matrix; doubles as the
// pseudo-inverse route for near-singular normal equations.
template <size_t N>
inline void jacobi_eigen(std::array<std::array<double, N>, N> a,
                         std::array<double, N>& eigvals,
                         std::array<std::array<double, N>, N>& eigvecs) {
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < N; ++j) eigvecs[i][j] = i == j ? 1.0 : 0.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (size_t i = 0; i < N; ++i)
      for (size_t j = i + 1; j < N; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-300) break;
    for (size_t p = 0; p < N; ++p)
      for (size_t q = p + 1; q < N; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (size_t k = 0; k < N; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (size_t k = 0; k < N; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (size_t k = 0; k < N; ++k) {
          double vkp = eigvecs[k][p], vkq = eigvecs[k][q];
          eigvecs[k][p] = c * vkp - s * vkq;
          eigvecs[k][q] = s * vkp + c * vkq;
        }
      }
  }
  for (size_t i = 0; i < N; ++i) eigvals[i] = a[i][i];
}

}  // namespace detail

// OLS of the metric on (alpha_cr, alpha_rd, alpha_t, dropout, 1), mapped to
// the paper normalization: beta_i = -c_i, beta_f = -beta_t, beta_B = c0 + c_t.
// Multiple seeds at one hyperparameter point are averaged first.
// When `min_norm` is set, rank-deficient designs are solved by dropping the
// null directions (minimum-norm solution) instead of throwing; coefficients
// of the varying columns are unaffected. Family-restricted fits rely on this,
// since the other alpha columns are constant there.
inline RegressionFit fit_regression(const std::vector<RunRecord>& records,
                                    bool min_norm = false) {
  static const std::array<const char*, 5> col_names = {"alpha_cr", "alpha_rd", "alpha_t",
                                                       "dropout", "intercept"};
  // seed-average per hyperparameter point
  std::map<std::array<double, 4>, std::pair<double, int>> grouped;
  for (const RunRecord& r : records) {
    if (r.failed) continue;
    std::array<double, 4> key = {r.alpha_cr, r.alpha_rd, r.alpha_t, r.dropout};
    auto& slot = grouped[key];
    slot.first += r.dev_metric;
    slot.second += 1;
  }
  std::vector<std::array<double, 5>> X;
  std::vector<double> y;
  for (const auto& [key, slot] : grouped) {
    X.push_back({key[0], key[1], key[2], key[3], 1.0});
    y.push_back(slot.first / slot.second);
  }
  int n = static_cast<int>(X.size());
  if (n < 6) throw analysis_error("fit_regression: need >= 6 points, got " + std::to_string(n));

  std::array<std::array<double, 5>, 5> xtx{};
  std::array<double, 5> xty{};
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 5; ++a) {
      xty[a] += X[static_cast<size_t>(i)][a] * y[static_cast<size_t>(i)];
      for (int b = 0; b < 5; ++b)
        xtx[a][b] += X[static_cast<size_t>(i)][a] * X[static_cast<size_t>(i)][b];
    }
  std::array<double, 5> eigvals{};
  std::array<std::array<double, 5>, 5> eigvecs{};
  detail::jacobi_eigen<5>(xtx, eigvals, eigvecs);
  double lmax = 0.0;
  for (double l : eigvals) lmax = std::max(lmax, std::abs(l));
  double rank_tol = lmax * 1e-12;
  for (size_t k = 0; k < 5; ++k) {
    if (std::abs(eigvals[k]) > rank_tol) continue;
    if (min_norm) continue;
    // name the columns loading on the null direction
    std::ostringstream msg;
    msg << "fit_regression: rank-deficient design; collinear columns:";
    for (size_t c = 0; c < 5; ++c)
      if (std::abs(eigvecs[c][k]) > 0.3) msg << " " << col_names[c];
    throw analysis_error(msg.str());
  }
  // pseudo-inverse solve via the eigendecomposition
  std::array<double, 5> coef{};
  std::array<std::array<double, 5>, 5> xtx_inv{};
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 5; ++j)
      for (size_t k = 0; k < 5; ++k) {
        if (std::abs(eigvals[k]) <= rank_tol) continue;  // min-norm: skip nulls
        xtx_inv[i][j] += eigvecs[i][k] * eigvecs[j][k] / eigvals[k];
      }
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 5; ++j) coef[i] += xtx_inv[i][j] * xty[j];

  double rss = 0.0;
  for (int i = 0; i < n; ++i) {
    double pred = 0.0;
    for (int a = 0; a < 5; ++a) pred += coef[static_cast<size_t>(a)] * X[static_cast<size_t>(i)][a];
    double r = y[static_cast<size_t>(i)] - pred;
    rss += r * r;
  }

  RegressionFit fit;
  fit.beta_cr = -coef[0];
  fit.beta_rd = -coef[1];
  fit.beta_t = -coef[2];
  fit.beta_do = -coef[3];
  fit.beta_f = -fit.beta_t;
  fit.beta_B = coef[4] + coef[2];
  fit.n_points = n;
  fit.residual_rms = std::sqrt(rss / n);
  double sigma2 = n > 5 ? rss / (n - 5) : 0.0;
  for (size_t i = 0; i < 5; ++i) fit.std_errors[i] = std::sqrt(sigma2 * xtx_inv[i][i]);
  return fit;
}

// R = beta_cr a_cr + beta_rd a_rd + beta_t a_t + beta_do d + beta_f
inline double total_R(const RegressionFit& fit, double alpha_cr, double alpha_rd, double alpha_t,
                      double dropout) {
  return fit.beta_cr * alpha_cr + fit.beta_rd * alpha_rd + fit.beta_t * alpha_t +
         fit.beta_do * dropout + fit.beta_f;
}

struct CollapseRow {
  double R;
  double metric;
  std::string family;
  double dropout;
};

// Labels each record by which alpha deviates from its modal value across the
// input set (the tuned family) and annotates it with its R.
inline std::vector<CollapseRow> collapse_export(const RegressionFit& fit,
                                                const std::vector<RunRecord>& records) {
  auto modal = [&](auto getter) {
    std::map<double, int> counts;
    for (const RunRecord& r : records) counts[getter(r)]++;
    double best = 0;
    int bc = -1;
    for (const auto& [v, c] : counts)
      if (c > bc) {
        bc = c;
        best = v;
      }
    return best;
  };
  double base_cr = modal([](const RunRecord& r) { return r.alpha_cr; });
  double base_rd = modal([](const RunRecord& r) { return r.alpha_rd; });
  double base_t = modal([](const RunRecord& r) { return r.alpha_t; });

  std::vector<CollapseRow> rows;
  rows.reserve(records.size());
  for (const RunRecord& r : records) {
    CollapseRow row;
    row.R = total_R(fit, r.alpha_cr, r.alpha_rd, r.alpha_t, r.dropout);
    row.metric = r.dev_metric;
    row.dropout = r.dropout;
    if (r.alpha_cr != base_cr)
      row.family = "alpha_cr";
    else if (r.alpha_rd != base_rd)
      row.family = "alpha_rd";
    else if (r.alpha_t != base_t)
      row.family = "alpha_t";
    else
      row.family = "base";
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_collapse_csv(const std::vector<CollapseRow>& rows, std::ostream& os) {
  os << "R,metric,family,dropout\n";
  os.precision(17);
  for (const CollapseRow& r : rows)
    os << r.R << "," << r.metric << "," << r.family << "," << r.dropout << "\n";
}

// Groups records by their (alpha_cr, alpha_rd, alpha_t) tuple, seed-averages
// each dropout point, keeps the over-regularized suffix of every series, and
// pools the survivors for the regression. `family_filter` restricts the fit
// to records of one tuned family ("" pools everything).
struct AnalyzeResult {
  RegressionFit fit;
  std::vector<CollapseRow> collapse;
  int selected_points = 0;
};

inline AnalyzeResult analyze_records(const std::vector<RunRecord>& records,
                                     const std::string& family_filter = "") {
  // seed-average per full hyperparameter tuple
  std::map<std::array<double, 4>, std::pair<double, int>> grouped;
  for (const RunRecord& r : records) {
    if (r.failed) continue;
    auto& slot = grouped[{r.alpha_cr, r.alpha_rd, r.alpha_t, r.dropout}];
    slot.first += r.dev_metric;
    slot.second += 1;
  }
  std::map<std::array<double, 3>, std::vector<std::pair<double, double>>> series;
  for (const auto& [key, slot] : grouped)
    series[{key[0], key[1], key[2]}].emplace_back(key[3], slot.first / slot.second);

  std::vector<RunRecord> selected;
  for (const auto& [alphas, pts] : series) {
    if (pts.size() < 2) continue;
    for (const auto& [dropout, metric] : select_over_regularized(pts)) {
      RunRecord r;
      r.alpha_cr = alphas[0];
      r.alpha_rd = alphas[1];
      r.alpha_t = alphas[2];
      r.dropout = dropout;
      r.dev_metric = metric;
      selected.push_back(std::move(r));
    }
  }
  if (!family_filter.empty()) {
    RegressionFit dummy;  // family labels only need the records, not the fit
    std::vector<CollapseRow> labels = collapse_export(dummy, selected);
    std::vector<RunRecord> kept;
    for (size_t i = 0; i < selected.size(); ++i)
      if (labels[i].family == family_filter || labels[i].family == "base")
        kept.push_back(selected[i]);
    selected = std::move(kept);
  }
  AnalyzeResult out;
  out.selected_points = static_cast<int>(selected.size());
  if (out.selected_points < 6)
    throw analysis_error("analyze: only " + std::to_string(out.selected_points) +
                         " over-regularized points after selection; need >= 6");
  out.fit = fit_regression(selected, /*min_norm=*/!family_filter.empty());
  out.collapse = collapse_export(out.fit, records);
  return out;
}

// Paired bootstrap over per-item scores. p is the fraction of resamples
// where mean(a) <= mean(b); ties count toward non-significance.
inline double paired_bootstrap(const std::vector<double>& scores_a,
                               const std::vector<double>& scores_b, int n_resamples,
                               uint64_t seed) {
  if (scores_a.size() != scores_b.size())
    throw std::invalid_argument("paired_bootstrap: length mismatch");
  if (scores_a.size() < 10) throw std::invalid_argument("paired_bootstrap: need >= 10 items");
  if (n_resamples < 1000) throw std::invalid_argument("paired_bootstrap: need >= 1000 resamples");
  size_t n = scores_a.size();
  RngStream rng(seed, 0xB007ULL);
  long hits = 0;
  for (int r = 0; r < n_resamples; ++r) {
    double sa = 0.0, sb = 0.0;
    for (size_t i = 0; i < n; ++i) {
      size_t idx = rng.below(static_cast<uint64_t>(r), i, n);
      sa += scores_a[idx];
      sb += scores_b[idx];
    }
    if (sa <= sb) ++hits;
  }
  return static_cast<double>(hits) / n_resamples;
}

}  // namespace reghorizon
