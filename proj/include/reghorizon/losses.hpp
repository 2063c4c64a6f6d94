#pragma once

#include <string>
#include <vector>

#include "reghorizon/graph.hpp"
#include "reghorizon/model.hpp"
#include "reghorizon/tensor.hpp"

namespace reghorizon {

enum class DistanceMetric { MSE, COS, KL };
enum class TapPoint { ENC, XATTN, LDS, LOGITS, SOFTMAX };

inline constexpr double kKlProbFloor = 1e-12;

inline std::string metric_name(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::MSE: return "mse";
    case DistanceMetric::COS: return "cos";
    case DistanceMetric::KL: return "kl";
  }
  return "?";
}
inline std::string tap_name(TapPoint t) {
  switch (t) {
    case TapPoint::ENC: return "enc";
    case TapPoint::XATTN: return "xattn";
    case TapPoint::LDS: return "lds";
    case TapPoint::LOGITS: return "logits";
    case TapPoint::SOFTMAX: return "softmax";
  }
  return "?";
}
inline DistanceMetric metric_from_name(const std::string& s) {
  if (s == "mse") return DistanceMetric::MSE;
  if (s == "cos") return DistanceMetric::COS;
  if (s == "kl") return DistanceMetric::KL;
  throw config_error("unknown distance metric: " + s);
}
inline TapPoint tap_from_name(const std::string& s) {
  if (s == "enc") return TapPoint::ENC;
  if (s == "xattn") return TapPoint::XATTN;
  if (s == "lds") return TapPoint::LDS;
  if (s == "logits") return TapPoint::LOGITS;
  if (s == "softmax") return TapPoint::SOFTMAX;
  throw config_error("unknown tap point: " + s);
}

// All loss-ratio knobs of the training objective. alpha_s is fixed at 1.
struct LossWeights {
  double alpha_s = 1.0;
  double alpha_t = 1.0;
  double alpha_cr = 0.0;
  double alpha_rd = 0.0;
  TapPoint cr_tap = TapPoint::SOFTMAX;
  DistanceMetric cr_metric = DistanceMetric::KL;
  TapPoint rd_tap = TapPoint::SOFTMAX;
  DistanceMetric rd_metric = DistanceMetric::KL;

  void validate() const {
    if (alpha_s != 1.0) throw config_error("loss: alpha_s is fixed at 1.0");
    if (alpha_t < 0.0 || alpha_cr < 0.0 || alpha_rd < 0.0)
      throw config_error("loss: alpha weights must be >= 0");
    if (cr_metric == DistanceMetric::KL && cr_tap != TapPoint::SOFTMAX)
      throw config_error("loss: KL distance is only legal at the softmax tap");
    if (rd_metric == DistanceMetric::KL && rd_tap != TapPoint::SOFTMAX)
      throw config_error("loss: KL distance is only legal at the softmax tap");
  }
};

struct LossBreakdown {
  Var ce_st, ce_mt, cr, rd, total;
};

// --- the three distances ------------------------------------------------------
//
// Each is a mean over valid row positions of a per-row distance:
//   MSE: ||a - b||^2 / d
//   COS: 1 - a.b / (|a| |b|)
//   KL:  (a.log(a/b) + b.log(b/a)) / 2, rows must be distributions
// Gradient flows into both arguments; no stop-gradient on either side.
inline Var distance(DistanceMetric metric, Var a, Var b, const std::vector<double>& row_mask) {
  if (!same_shape(a.val(), b.val())) throw std::invalid_argument("distance: shape mismatch");
  int d = a.val().cols();
  switch (metric) {
    case DistanceMetric::MSE: {
      Var diff = sub(a, b);
      Var per_row = scale(rowwise_sum(mul(diff, diff)), 1.0 / d);
      return masked_mean_vec(per_row, row_mask);
    }
    case DistanceMetric::COS: {
      const Tensor& A = a.val();
      const Tensor& B = b.val();
      for (int r = 0; r < A.rows(); ++r) {
        if (row_mask[static_cast<size_t>(r)] == 0.0) continue;
        double na = 0.0, nb = 0.0;
        for (int j = 0; j < d; ++j) {
          na += A.at(r, j) * A.at(r, j);
          nb += B.at(r, j) * B.at(r, j);
        }
        if (na == 0.0 || nb == 0.0)
          throw numeric_error("distance: zero-norm vector under COS");
      }
      Var dot = dot_rows(a, b);
      Var norms = mul(sqrt_op(dot_rows(a, a)), sqrt_op(dot_rows(b, b)));
      Var cosine = divide(dot, norms);
      Var ones = a.g->constant(Tensor::full({A.rows()}, 1.0));
      return masked_mean_vec(sub(ones, cosine), row_mask);
    }
    case DistanceMetric::KL: {
      const Tensor& A = a.val();
      const Tensor& B = b.val();
      for (int r = 0; r < A.rows(); ++r) {
        if (row_mask[static_cast<size_t>(r)] == 0.0) continue;
        double sa = 0.0, sb = 0.0;
        for (int j = 0; j < d; ++j) {
          if (A.at(r, j) < 0.0 || B.at(r, j) < 0.0)
            throw std::invalid_argument("distance: KL on negative entries");
          sa += A.at(r, j);
          sb += B.at(r, j);
        }
        if (std::abs(sa - 1.0) > 1e-6 || std::abs(sb - 1.0) > 1e-6)
          throw std::invalid_argument("distance: KL rows must be probability vectors");
      }
      Var log_ratio = sub(log_op(a, kKlProbFloor), log_op(b, kKlProbFloor));
      Var fwd = rowwise_sum(mul(a, log_ratio));   // sum a log a/b
      Var bwd = rowwise_sum(mul(b, log_ratio));   // sum b log a/b = -sum b log b/a
      Var per_row = scale(sub(fwd, bwd), 0.5);
      return masked_mean_vec(per_row, row_mask);
    }
  }
  throw std::invalid_argument("distance: unknown metric");
}

// Mean negative log-likelihood over non-pad target positions: per-token mean
// within an item, then mean over items.
inline Var ce_loss(const TapBundle& bundle, const Batch& batch) {
  Graph& g = *bundle.items.at(0).logits.g;
  Var acc = g.constant(Tensor::scalar(0.0));
  int n = static_cast<int>(bundle.items.size());
  for (int b = 0; b < n; ++b) {
    std::vector<int> target_out = batch.target_out_item(b);
    std::vector<double> valid(target_out.size(), 1.0);
    acc = add(acc, cross_entropy(bundle.items[static_cast<size_t>(b)].logits, target_out, valid));
  }
  return scale(acc, 1.0 / n);
}

namespace detail {

inline Var tap_of(const ItemTaps& taps, TapPoint t) {
  switch (t) {
    case TapPoint::ENC: return taps.enc;
    case TapPoint::XATTN: return taps.xattn;
    case TapPoint::LDS: return taps.lds;
    case TapPoint::LOGITS: return taps.logits;
    case TapPoint::SOFTMAX: return taps.softmax;
  }
  throw std::invalid_argument("unknown tap");
}

// Distance between two bundles at one tap, averaged over batch items.
// Decoder-side taps align by target position. ENC taps are mean-pooled over
// valid time steps first, since the two branches' encoder lengths differ.
inline Var bundle_distance(TapPoint tap, DistanceMetric metric, const TapBundle& a,
                           const TapBundle& b) {
  if (a.items.size() != b.items.size())
    throw std::invalid_argument("bundle_distance: batch size mismatch");
  Graph& g = *a.items.at(0).enc.g;
  Var acc = g.constant(Tensor::scalar(0.0));
  int n = static_cast<int>(a.items.size());
  for (int i = 0; i < n; ++i) {
    Var fa = tap_of(a.items[static_cast<size_t>(i)], tap);
    Var fb = tap_of(b.items[static_cast<size_t>(i)], tap);
    std::vector<double> row_mask;
    if (tap == TapPoint::ENC) {
      fa = masked_mean_rows(fa, std::vector<double>(static_cast<size_t>(fa.val().rows()), 1.0));
      fb = masked_mean_rows(fb, std::vector<double>(static_cast<size_t>(fb.val().rows()), 1.0));
      row_mask = {1.0};
    } else {
      if (a.dec_len[static_cast<size_t>(i)] != b.dec_len[static_cast<size_t>(i)])
        throw std::invalid_argument("bundle_distance: target length mismatch");
      row_mask.assign(static_cast<size_t>(fa.val().rows()), 1.0);
    }
    acc = add(acc, distance(metric, fa, fb, row_mask));
  }
  return scale(acc, 1.0 / n);
}

}  // namespace detail

// Consistency regularization: alpha_cr * D(cr_metric) between the speech and
// text bundles of the same examples at cr_tap.
inline Var consistency_loss(const LossWeights& w, const TapBundle& speech_bundle,
                            const TapBundle& text_bundle) {
  w.validate();
  Graph& g = *speech_bundle.items.at(0).enc.g;
  if (w.alpha_cr == 0.0) return g.constant(Tensor::scalar(0.0));
  return scale(detail::bundle_distance(w.cr_tap, w.cr_metric, speech_bundle, text_bundle),
               w.alpha_cr);
}

// R-drop: alpha_rd * D(rd_metric) between two dropout-perturbed speech passes.
inline Var rdrop_loss(const LossWeights& w, const TapBundle& pass1, const TapBundle& pass2) {
  w.validate();
  Graph& g = *pass1.items.at(0).enc.g;
  if (w.alpha_rd == 0.0) return g.constant(Tensor::scalar(0.0));
  return scale(detail::bundle_distance(w.rd_tap, w.rd_metric, pass1, pass2), w.alpha_rd);
}

// Composes the full objective. Forward passes run only as needed: the text
// pass when alpha_t > 0 or alpha_cr > 0, a second speech pass when
// alpha_rd > 0 (in which case ce_st is the mean of the two passes' CE).
inline LossBreakdown total_loss(const LossWeights& w, const Batch& batch, const BoundModel& bm,
                                const RngStream& rng, bool dropout_on = true) {
  w.validate();
  Graph& g = *bm.graph;
  TapBundle speech1 = forward_speech(bm, batch, rng.substream(1), dropout_on);
  LossBreakdown out;
  out.ce_st = ce_loss(speech1, batch);
  if (w.alpha_rd > 0.0) {
    TapBundle speech2 = forward_speech(bm, batch, rng.substream(2), dropout_on);
    out.ce_st = scale(add(out.ce_st, ce_loss(speech2, batch)), 0.5);
    out.rd = rdrop_loss(w, speech1, speech2);
  } else {
    out.rd = g.constant(Tensor::scalar(0.0));
  }
  if (w.alpha_t > 0.0 || w.alpha_cr > 0.0) {
    TapBundle text = forward_text(bm, batch, rng.substream(3), dropout_on);
    out.ce_mt = ce_loss(text, batch);
    out.cr = consistency_loss(w, speech1, text);
  } else {
    out.ce_mt = g.constant(Tensor::scalar(0.0));
    out.cr = g.constant(Tensor::scalar(0.0));
  }
  out.total = add(add(scale(out.ce_st, w.alpha_s), scale(out.ce_mt, w.alpha_t)),
                  add(out.cr, out.rd));
  return out;
}

// Independent direct-summation evaluation of the symmetric KL of two
// probability-row tensors; the oracle side of the softmax-KL dual route.
inline double symmetric_kl_direct(const Tensor& p, const Tensor& q) {
  if (!same_shape(p, q)) throw std::invalid_argument("symmetric_kl_direct: shape mismatch");
  int rows = p.rows(), d = p.cols();
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    double fwd = 0.0, bwd = 0.0;
    for (int j = 0; j < d; ++j) {
      double a = std::max(p.at(r, j), kKlProbFloor);
      double b = std::max(q.at(r, j), kKlProbFloor);
      fwd += p.at(r, j) * std::log(a / b);
      bwd += q.at(r, j) * std::log(b / a);
    }
    total += 0.5 * (fwd + bwd);
  }
  return total / rows;
}

}  // namespace reghorizon
