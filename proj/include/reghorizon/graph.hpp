#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "reghorizon/tensor.hpp"

namespace reghorizon {

// Reverse-mode tape. Node creation order is a topological order of the
// computation, so the backward sweep is a single reverse pass. Adjoints are
// computed into a scratch buffer per backward() call and then accumulated
// into the persistent per-node grad, so repeated backward() calls add up.
class Graph;

struct Var {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& val() const;
  const std::vector<double>& grad() const;
};

// Flat per-backward adjoint storage: one arena indexed by node id.
class Adjoints {
 public:
  struct Slice {
    double* p;
    size_t n;
    double& operator[](size_t i) const { return p[i]; }
    size_t size() const { return n; }
  };

  Adjoints(const std::vector<size_t>& sizes) {
    offsets_.reserve(sizes.size());
    size_t total = 0;
    for (size_t s : sizes) {
      offsets_.push_back(total);
      total += s;
    }
    sizes_ = sizes;
    buf_.assign(total, 0.0);
  }

  Slice operator[](int id) const {
    return {const_cast<double*>(buf_.data()) + offsets_[static_cast<size_t>(id)],
            sizes_[static_cast<size_t>(id)]};
  }

 private:
  std::vector<size_t> offsets_, sizes_;
  std::vector<double> buf_;
};

class Graph {
 public:
  using BackFn = std::function<void(Adjoints&)>;

  struct Node {
    Tensor value;
    std::vector<double> grad;  // accumulated d(loss)/d(node)
    BackFn back;               // empty for leaves/constants
  };

  std::deque<Node> nodes;

  Var emplace(Tensor value, BackFn back = nullptr) {
    value.require_finite("graph node");
    nodes.push_back(Node{std::move(value), {}, std::move(back)});
    return Var{this, static_cast<int>(nodes.size()) - 1};
  }

  Var leaf(const Tensor& t) { return emplace(t); }
  Var constant(const Tensor& t) { return emplace(t); }

  Node& node(int id) { return nodes[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes[static_cast<size_t>(id)]; }
  const Tensor& value(int id) const { return nodes[static_cast<size_t>(id)].value; }

  void backward(Var loss) {
    if (loss.g != this || loss.id < 0) throw std::invalid_argument("backward: foreign var");
    if (value(loss.id).size() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    std::vector<size_t> sizes;
    sizes.reserve(nodes.size());
    for (const Node& n : nodes) sizes.push_back(n.value.values.size());
    Adjoints adj(sizes);
    adj[loss.id][0] = 1.0;
    for (int i = loss.id; i >= 0; --i)
      if (nodes[static_cast<size_t>(i)].back) nodes[static_cast<size_t>(i)].back(adj);
    for (size_t i = 0; i < nodes.size(); ++i) {
      Node& n = nodes[i];
      if (n.grad.empty()) n.grad.assign(n.value.values.size(), 0.0);
      auto slice = adj[static_cast<int>(i)];
      for (size_t k = 0; k < n.grad.size(); ++k) n.grad[k] += slice[k];
    }
  }
};

inline const Tensor& Var::val() const { return g->value(id); }
inline const std::vector<double>& Var::grad() const { return g->node(id).grad; }

namespace detail {
inline void require_same_graph(Var a, Var b) {
  if (a.g != b.g) throw std::invalid_argument("op: vars from different graphs");
}
}  // namespace detail

// --- elementwise -----------------------------------------------------------

// An op's backward closure needs its own node id, which is only known after
// insertion; this helper wires it up.
template <typename F>
inline Var make_op(Graph& g, Tensor out, F&& back_with_self) {
  Var v = g.emplace(std::move(out));
  int self = v.id;
  g.node(self).back = [self, f = std::forward<F>(back_with_self)](Adjoints& adj) {
    f(adj, self);
  };
  return v;
}

inline Var add(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  if (!same_shape(a.val(), b.val())) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a.val();
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.val().values[i];
  int ia = a.id, ib = b.id;
  return make_op(g, std::move(out), [ia, ib](Adjoints& adj, int self) {
    auto gs = adj[self];
    auto ga = adj[ia];
    auto gb = adj[ib];
    for (size_t i = 0; i < gs.size(); ++i) {
      ga[i] += gs[i];
      gb[i] += gs[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  if (!same_shape(a.val(), b.val())) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a.val();
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.val().values[i];
  int ia = a.id, ib = b.id;
  return make_op(g, std::move(out), [ia, ib](Adjoints& adj, int self) {
    auto gs = adj[self];
    auto ga = adj[ia];
    auto gb = adj[ib];
    for (size_t i = 0; i < gs.size(); ++i) {
      ga[i] += gs[i];
      gb[i] -= gs[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  if (!same_shape(a.val(), b.val())) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = a.val();
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= b.val().values[i];
  int ia = a.id, ib = b.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, ib, gp](Adjoints& adj, int self) {
    const auto& va = gp->value(ia).values;
    const auto& vb = gp->value(ib).values;
    auto gs = adj[self];
    auto ga = adj[ia];
    auto gb = adj[ib];
    for (size_t i = 0; i < gs.size(); ++i) {
      ga[i] += gs[i] * vb[i];
      gb[i] += gs[i] * va[i];
    }
  });
}

inline Var divide(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  if (!same_shape(a.val(), b.val())) throw std::invalid_argument("div: shape mismatch");
  Tensor out = a.val();
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] /= b.val().values[i];
  int ia = a.id, ib = b.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, ib, gp](Adjoints& adj, int self) {
    const auto& va = gp->value(ia).values;
    const auto& vb = gp->value(ib).values;
    for (size_t i = 0; i < adj[self].size(); ++i) {
      adj[ia][i] += adj[self][i] / vb[i];
      adj[ib][i] -= adj[self][i] * va[i] / (vb[i] * vb[i]);
    }
  });
}

inline Var scale(Var a, double c) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (double& v : out.values) v *= c;
  int ia = a.id;
  return make_op(g, std::move(out), [ia, c](Adjoints& adj, int self) {
    auto gs = adj[self];
    auto ga = adj[ia];
    for (size_t i = 0; i < gs.size(); ++i) ga[i] += c * gs[i];
  });
}

inline Var exp_op(Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (double& v : out.values) v = std::exp(v);
  int ia = a.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, gp](Adjoints& adj, int self) {
    const auto& y = gp->value(self).values;
    for (size_t i = 0; i < adj[self].size(); ++i) adj[ia][i] += adj[self][i] * y[i];
  });
}

// log with a floor inside; gradient is zero where the floor is active
inline Var log_op(Var a, double floor = 0.0) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (double& v : out.values) v = std::log(std::max(v, floor));
  int ia = a.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, gp, floor](Adjoints& adj, int self) {
    const auto& x = gp->value(ia).values;
    for (size_t i = 0; i < adj[self].size(); ++i)
      if (x[i] > floor) adj[ia][i] += adj[self][i] / x[i];
  });
}

inline Var relu(Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (double& v : out.values) v = std::max(v, 0.0);
  int ia = a.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, gp](Adjoints& adj, int self) {
    const auto& x = gp->value(ia).values;
    auto gs = adj[self];
    auto gx = adj[ia];
    for (size_t i = 0; i < gs.size(); ++i)
      if (x[i] > 0.0) gx[i] += gs[i];
  });
}

inline Var sqrt_op(Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (double& v : out.values) v = std::sqrt(v);
  int ia = a.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, gp](Adjoints& adj, int self) {
    const auto& y = gp->value(self).values;
    for (size_t i = 0; i < adj[self].size(); ++i)
      adj[ia][i] += adj[self][i] * 0.5 / y[i];
  });
}

inline Var add_const(Var a, const Tensor& c) {
  Graph& g = *a.g;
  if (!same_shape(a.val(), c)) throw std::invalid_argument("add_const: shape mismatch");
  Tensor out = a.val();
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += c.values[i];
  int ia = a.id;
  return make_op(g, std::move(out), [ia](Adjoints& adj, int self) {
    for (size_t i = 0; i < adj[self].size(); ++i) adj[ia][i] += adj[self][i];
  });
}

// --- matrix ops -------------------------------------------------------------

// C[m,n] = A[m,k] * B[k,n]
inline Var matmul(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
    throw std::invalid_argument("matmul: bad shapes");
  int m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double aip = A.values[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B.values[static_cast<size_t>(p) * n];
      double* crow = &out.values[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  int ia = a.id, ib = b.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, ib, gp, m, k, n](Adjoints& adj, int self) {
    const auto& Av = gp->value(ia).values;
    const auto& Bv = gp->value(ib).values;
    auto G = adj[self];
    auto dA = adj[ia];
    auto dB = adj[ib];
    // dA = G * B^T
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double s = 0.0;
        const double* grow = &G[static_cast<size_t>(i) * n];
        const double* brow = &Bv[static_cast<size_t>(p) * n];
        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
        dA[static_cast<size_t>(i) * k + p] += s;
      }
    // dB = A^T * G
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        double aip = Av[static_cast<size_t>(i) * k + p];
        if (aip == 0.0) continue;
        const double* grow = &G[static_cast<size_t>(i) * n];
        double* brow = &dB[static_cast<size_t>(p) * n];
        for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
      }
  });
}

// C[m,n] = A[m,k] * B[n,k]^T  (attention scores)
inline Var matmul_nt(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[1])
    throw std::invalid_argument("matmul_nt: bad shapes");
  int m = A.shape[0], k = A.shape[1], n = B.shape[0];
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      const double* arow = &A.values[static_cast<size_t>(i) * k];
      const double* brow = &B.values[static_cast<size_t>(j) * k];
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      out.values[static_cast<size_t>(i) * n + j] = s;
    }
  int ia = a.id, ib = b.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, ib, gp, m, k, n](Adjoints& adj, int self) {
    const auto& Av = gp->value(ia).values;
    const auto& Bv = gp->value(ib).values;
    auto G = adj[self];
    auto dA = adj[ia];
    auto dB = adj[ib];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double gij = G[static_cast<size_t>(i) * n + j];
        if (gij == 0.0) continue;
        const double* brow = &Bv[static_cast<size_t>(j) * k];
        const double* arow = &Av[static_cast<size_t>(i) * k];
        double* darow = &dA[static_cast<size_t>(i) * k];
        double* dbrow = &dB[static_cast<size_t>(j) * k];
        for (int p = 0; p < k; ++p) {
          darow[p] += gij * brow[p];
          dbrow[p] += gij * arow[p];
        }
      }
  });
}

// broadcast add of a row vector b[n] to every row of a[m,n]
inline Var add_rowvec(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  int n = A.cols();
  if (B.size() != n) throw std::invalid_argument("add_rowvec: width mismatch");
  Tensor out = A;
  int m = A.rows();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.values[static_cast<size_t>(i) * n + j] += B.values[j];
  int ia = a.id, ib = b.id;
  return make_op(g, std::move(out), [ia, ib, m, n](Adjoints& adj, int self) {
    auto gs = adj[self];
    auto ga = adj[ia];
    auto gb = adj[ib];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double gij = gs[static_cast<size_t>(i) * n + j];
        ga[static_cast<size_t>(i) * n + j] += gij;
        gb[j] += gij;
      }
  });
}

// --- softmax / normalization -------------------------------------------------

inline Var softmax_lastdim(Var a) {
  Graph& g = *a.g;
  const Tensor& A = a.val();
  if (A.shape.empty() || A.shape.back() < 1)
    throw std::invalid_argument("softmax: empty last dim");
  A.require_finite("softmax input");
  int d = A.shape.back();
  int rows = static_cast<int>(A.size() / d);
  Tensor out = A;
  for (int r = 0; r < rows; ++r) {
    double* row = &out.values[static_cast<size_t>(r) * d];
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (int j = 0; j < d; ++j) row[j] /= z;
  }
  int ia = a.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, gp, rows, d](Adjoints& adj, int self) {
    const auto& y = gp->value(self).values;
    auto gs = adj[self];
    auto gx = adj[ia];
    for (int r = 0; r < rows; ++r) {
      const double* yrow = &y[static_cast<size_t>(r) * d];
      const double* grow = &gs[static_cast<size_t>(r) * d];
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += yrow[j] * grow[j];
      double* xrow = &gx[static_cast<size_t>(r) * d];
      for (int j = 0; j < d; ++j) xrow[j] += yrow[j] * (grow[j] - dot);
    }
  });
}

// layer norm over the last dim with learned gain/bias vectors
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  detail::require_same_graph(x, gain);
  detail::require_same_graph(x, bias);
  Graph& g = *x.g;
  const Tensor& X = x.val();
  int d = X.shape.back();
  if (gain.val().size() != d || bias.val().size() != d)
    throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  int rows = static_cast<int>(X.size() / d);
  Tensor out = X;
  std::vector<double> mu(rows), inv(rows);
  for (int r = 0; r < rows; ++r) {
    double* row = &out.values[static_cast<size_t>(r) * d];
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += row[j];
    m /= d;
    double v = 0.0;
    for (int j = 0; j < d; ++j) v += (row[j] - m) * (row[j] - m);
    v /= d;
    double iv = 1.0 / std::sqrt(v + eps);
    mu[r] = m;
    inv[r] = iv;
    for (int j = 0; j < d; ++j)
      row[j] = (row[j] - m) * iv * gain.val().values[j] + bias.val().values[j];
  }
  int ix = x.id, ig = gain.id, ib = bias.id;
  Graph* gp = &g;
  return make_op(g, std::move(out),
                 [ix, ig, ib, gp, rows, d, mu, inv](Adjoints& adj, int self) {
    const auto& X = gp->value(ix).values;
    const auto& G = gp->value(ig).values;
    auto gs = adj[self];
    auto dx_s = adj[ix];
    auto dgain = adj[ig];
    auto dbias = adj[ib];
    for (int r = 0; r < rows; ++r) {
      const double* xrow = &X[static_cast<size_t>(r) * d];
      const double* grow = &gs[static_cast<size_t>(r) * d];
      double m = mu[r], iv = inv[r];
      // xhat_j = (x_j - m) * iv
      double sum_gh = 0.0, sum_gh_xhat = 0.0;
      for (int j = 0; j < d; ++j) {
        double xhat = (xrow[j] - m) * iv;
        double gh = grow[j] * G[j];
        sum_gh += gh;
        sum_gh_xhat += gh * xhat;
        dgain[j] += grow[j] * xhat;
        dbias[j] += grow[j];
      }
      for (int j = 0; j < d; ++j) {
        double xhat = (xrow[j] - m) * iv;
        double gh = grow[j] * G[j];
        dx_s[static_cast<size_t>(r) * d + j] +=
            iv * (gh - sum_gh / d - xhat * sum_gh_xhat / d);
      }
    }
  });
}

// --- lookup / dropout / conv --------------------------------------------------

// rows of `table` [V, d] gathered by ids -> [T, d]
inline Var embedding(Var table, const std::vector<int>& ids) {
  Graph& g = *table.g;
  const Tensor& T = table.val();
  int V = T.shape[0], d = T.shape[1];
  for (int id : ids)
    if (id < 0 || id >= V) throw std::invalid_argument("embedding: id out of range");
  int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out.values[static_cast<size_t>(i) * d + j] =
          T.values[static_cast<size_t>(ids[i]) * d + j];
  int it = table.id;
  return make_op(g, std::move(out), [it, ids, d](Adjoints& adj, int self) {
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        adj[it][static_cast<size_t>(ids[i]) * d + j] += adj[self][i * d + j];
  });
}

// Inverted dropout. The mask is a pure function of (rng, counter); p = 0 is
// an exact identity (the same Var is returned untouched).
inline Var dropout(Var x, double p, const RngStream& rng, uint64_t counter) {
  if (p < 0.0 || p >= 1.0) throw config_error("dropout: rate must be in [0,1)");
  if (p == 0.0) return x;
  Graph& g = *x.g;
  const Tensor& X = x.val();
  size_t n = X.values.size();
  std::vector<double> keep(n);
  double s = 1.0 / (1.0 - p);
  for (size_t i = 0; i < n; ++i)
    keep[i] = rng.uniform(counter, i) < p ? 0.0 : s;
  Tensor out = X;
  for (size_t i = 0; i < n; ++i) out.values[i] *= keep[i];
  int ix = x.id;
  return make_op(g, std::move(out), [ix, keep](Adjoints& adj, int self) {
    auto gs = adj[self];
    auto gx = adj[ix];
    for (size_t i = 0; i < gs.size(); ++i) gx[i] += gs[i] * keep[i];
  });
}

// 1-D convolution over time: x [T, Cin], w [k*Cin, Cout], b [Cout],
// symmetric zero padding (k-1)/2, output length ceil(T / stride).
inline Var conv1d(Var x, Var w, Var b, int kernel, int stride) {
  detail::require_same_graph(x, w);
  detail::require_same_graph(x, b);
  Graph& g = *x.g;
  const Tensor& X = x.val();
  const Tensor& W = w.val();
  int T = X.shape[0], cin = X.shape[1];
  if (W.shape[0] != kernel * cin) throw std::invalid_argument("conv1d: weight shape");
  int cout = W.shape[1];
  int pad = (kernel - 1) / 2;
  int tout = (T + 2 * pad - kernel) / stride + 1;
  Tensor out = Tensor::zeros({tout, cout});
  for (int t = 0; t < tout; ++t) {
    int t0 = t * stride - pad;
    for (int kk = 0; kk < kernel; ++kk) {
      int ts = t0 + kk;
      if (ts < 0 || ts >= T) continue;
      for (int ci = 0; ci < cin; ++ci) {
        double xv = X.values[static_cast<size_t>(ts) * cin + ci];
        if (xv == 0.0) continue;
        const double* wrow = &W.values[static_cast<size_t>(kk * cin + ci) * cout];
        double* orow = &out.values[static_cast<size_t>(t) * cout];
        for (int co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
      }
    }
    for (int co = 0; co < cout; ++co)
      out.values[static_cast<size_t>(t) * cout + co] += b.val().values[co];
  }
  int ix = x.id, iw = w.id, ib = b.id;
  Graph* gp = &g;
  return make_op(g, std::move(out),
                 [ix, iw, ib, gp, T, cin, cout, kernel, stride, pad, tout](
                     Adjoints& adj, int self) {
    const auto& X = gp->value(ix).values;
    const auto& W = gp->value(iw).values;
    auto gs = adj[self];
    auto dX = adj[ix];
    auto dW = adj[iw];
    auto dbias = adj[ib];
    for (int t = 0; t < tout; ++t) {
      int t0 = t * stride - pad;
      const double* grow = &gs[static_cast<size_t>(t) * cout];
      for (int co = 0; co < cout; ++co) dbias[co] += grow[co];
      for (int kk = 0; kk < kernel; ++kk) {
        int ts = t0 + kk;
        if (ts < 0 || ts >= T) continue;
        for (int ci = 0; ci < cin; ++ci) {
          size_t wi = static_cast<size_t>(kk * cin + ci) * cout;
          double xv = X[static_cast<size_t>(ts) * cin + ci];
          double dx = 0.0;
          for (int co = 0; co < cout; ++co) {
            dW[wi + co] += xv * grow[co];
            dx += W[wi + co] * grow[co];
          }
          dX[static_cast<size_t>(ts) * cin + ci] += dx;
        }
      }
    }
  });
}

// --- reductions ---------------------------------------------------------------

inline Var sum_all(Var x) {
  Graph& g = *x.g;
  double s = 0.0;
  for (double v : x.val().values) s += v;
  int ix = x.id;
  return make_op(g, Tensor::scalar(s), [ix](Adjoints& adj, int self) {
    auto gx = adj[ix];
    double gs = adj[self][0];
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += gs;
  });
}

// per-row sum of a [T, d] matrix -> [T]
inline Var rowwise_sum(Var x) {
  Graph& g = *x.g;
  const Tensor& X = x.val();
  int rows = X.rows(), d = X.cols();
  Tensor out = Tensor::zeros({rows});
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += X.values[static_cast<size_t>(r) * d + j];
    out.values[r] = s;
  }
  int ix = x.id;
  return make_op(g, std::move(out), [ix, rows, d](Adjoints& adj, int self) {
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < d; ++j)
        adj[ix][static_cast<size_t>(r) * d + j] += adj[self][r];
  });
}

// per-row dot product of two [T, d] matrices -> [T]
inline Var dot_rows(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = *a.g;
  if (!same_shape(a.val(), b.val())) throw std::invalid_argument("dot_rows: shape mismatch");
  int rows = a.val().rows(), d = a.val().cols();
  Tensor out = Tensor::zeros({rows});
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j)
      s += a.val().values[static_cast<size_t>(r) * d + j] *
           b.val().values[static_cast<size_t>(r) * d + j];
    out.values[r] = s;
  }
  int ia = a.id, ib = b.id;
  Graph* gp = &g;
  return make_op(g, std::move(out), [ia, ib, gp, rows, d](Adjoints& adj, int self) {
    const auto& A = gp->value(ia).values;
    const auto& B = gp->value(ib).values;
    for (int r = 0; r < rows; ++r) {
      double gr = adj[self][r];
      for (int j = 0; j < d; ++j) {
        adj[ia][static_cast<size_t>(r) * d + j] += gr * B[static_cast<size_t>(r) * d + j];
        adj[ib][static_cast<size_t>(r) * d + j] += gr * A[static_cast<size_t>(r) * d + j];
      }
    }
  });
}

// weighted mean of a length-T vector; weights are fixed {0,1} validity flags
inline Var masked_mean_vec(Var v, const std::vector<double>& w) {
  Graph& g = *v.g;
  const Tensor& V = v.val();
  if (static_cast<size_t>(V.size()) != w.size())
    throw std::invalid_argument("masked_mean_vec: length mismatch");
  double wsum = 0.0, s = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    wsum += w[i];
    s += w[i] * V.values[i];
  }
  if (wsum == 0.0) throw std::invalid_argument("masked_mean_vec: empty mask");
  int iv = v.id;
  return make_op(g, Tensor::scalar(s / wsum),
                 [iv, w, wsum](Adjoints& adj, int self) {
    for (size_t i = 0; i < w.size(); ++i) adj[iv][i] += adj[self][0] * w[i] / wsum;
  });
}

// masked mean over rows of [T, d] -> [1, d]
inline Var masked_mean_rows(Var x, const std::vector<double>& w) {
  Graph& g = *x.g;
  const Tensor& X = x.val();
  int rows = X.rows(), d = X.cols();
  if (static_cast<size_t>(rows) != w.size())
    throw std::invalid_argument("masked_mean_rows: mask length mismatch");
  double wsum = 0.0;
  for (double wi : w) wsum += wi;
  if (wsum == 0.0) throw std::invalid_argument("masked_mean_rows: empty mask");
  Tensor out = Tensor::zeros({1, d});
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j)
      out.values[j] += w[r] * X.values[static_cast<size_t>(r) * d + j] / wsum;
  int ix = x.id;
  return make_op(g, std::move(out), [ix, w, wsum, d](Adjoints& adj, int self) {
    for (size_t r = 0; r < w.size(); ++r)
      for (int j = 0; j < d; ++j)
        adj[ix][r * d + j] += adj[self][j] * w[r] / wsum;
  });
}

// --- slicing ------------------------------------------------------------------

// column slice [c0, c1) of a [T, d] matrix
inline Var slice_cols(Var x, int c0, int c1) {
  Graph& g = *x.g;
  const Tensor& X = x.val();
  int rows = X.rows(), d = X.cols();
  if (c0 < 0 || c1 > d || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  int w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < w; ++j)
      out.values[static_cast<size_t>(r) * w + j] =
          X.values[static_cast<size_t>(r) * d + c0 + j];
  int ix = x.id;
  return make_op(g, std::move(out), [ix, rows, d, c0, w](Adjoints& adj, int self) {
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j)
        adj[ix][static_cast<size_t>(r) * d + c0 + j] +=
            adj[self][static_cast<size_t>(r) * w + j];
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Graph& g = *parts[0].g;
  int rows = parts[0].val().rows();
  int total = 0;
  for (const Var& p : parts) {
    if (p.val().rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.val().cols();
  }
  Tensor out = Tensor::zeros({rows, total});
  std::vector<int> ids, widths, offs;
  int off = 0;
  for (const Var& p : parts) {
    int w = p.val().cols();
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j)
        out.values[static_cast<size_t>(r) * total + off + j] =
            p.val().values[static_cast<size_t>(r) * w + j];
    ids.push_back(p.id);
    widths.push_back(w);
    offs.push_back(off);
    off += w;
  }
  return make_op(g, std::move(out),
                 [ids, widths, offs, rows, total](Adjoints& adj, int self) {
    for (size_t k = 0; k < ids.size(); ++k)
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < widths[k]; ++j)
          adj[ids[k]][static_cast<size_t>(r) * widths[k] + j] +=
              adj[self][static_cast<size_t>(r) * total + offs[k] + j];
  });
}

// --- fused cross entropy --------------------------------------------------------

// Mean negative log-likelihood over rows where valid[r] != 0. Stable
// log-sum-exp; backward is (softmax - onehot) / count on valid rows.
inline Var cross_entropy(Var logits, const std::vector<int>& targets,
                         const std::vector<double>& valid) {
  Graph& g = *logits.g;
  const Tensor& L = logits.val();
  int rows = L.rows(), V = L.cols();
  if (targets.size() != static_cast<size_t>(rows) || valid.size() != static_cast<size_t>(rows))
    throw std::invalid_argument("cross_entropy: target length mismatch");
  double count = 0.0;
  for (double w : valid) count += w;
  if (count == 0.0) throw std::invalid_argument("cross_entropy: no valid targets");
  double loss = 0.0;
  std::vector<double> probs(static_cast<size_t>(rows) * V);
  for (int r = 0; r < rows; ++r) {
    const double* row = &L.values[static_cast<size_t>(r) * V];
    double mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    double lz = std::log(z) + mx;
    for (int j = 0; j < V; ++j)
      probs[static_cast<size_t>(r) * V + j] = std::exp(row[j] - lz);
    if (valid[r] != 0.0) {
      int t = targets[r];
      if (t < 0 || t >= V) throw std::invalid_argument("cross_entropy: target out of range");
      loss += valid[r] * (lz - row[t]);
    }
  }
  loss /= count;
  int il = logits.id;
  return make_op(g, Tensor::scalar(loss),
                 [il, targets, valid, count, probs, rows, V](Adjoints& adj, int self) {
    double gscale = adj[self][0] / count;
    auto gl = adj[il];
    for (int r = 0; r < rows; ++r) {
      if (valid[r] == 0.0) continue;
      for (int j = 0; j < V; ++j)
        gl[static_cast<size_t>(r) * V + j] +=
            gscale * valid[r] *
            (probs[static_cast<size_t>(r) * V + j] - (j == targets[r] ? 1.0 : 0.0));
    }
  });
}

// --- gradient checking ------------------------------------------------------------

// Builds the scalar function twice per perturbed element (central
// differences) and compares against the analytic gradient. Returns the max
// of |analytic - numeric| / max(1, |analytic|) over all leaf elements.
inline double check_gradients(
    const std::function<Var(Graph&, std::vector<Var>&)>& f,
    std::vector<Tensor> leaves, double eps = 1e-5) {
  if (eps < 1e-7 || eps > 1e-3) throw std::invalid_argument("check_gradients: eps range");
  auto eval = [&](const std::vector<Tensor>& ls) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(ls.size());
    for (const Tensor& t : ls) vars.push_back(g.leaf(t));
    std::vector<Var> vcopy = vars;
    Var loss = f(g, vcopy);
    return loss.val().values[0];
  };
  // analytic pass
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& t : leaves) vars.push_back(g.leaf(t));
  std::vector<Var> vcopy = vars;
  Var loss = f(g, vcopy);
  g.backward(loss);
  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    const auto& analytic = vars[li].grad();
    for (size_t k = 0; k < leaves[li].values.size(); ++k) {
      double orig = leaves[li].values[k];
      leaves[li].values[k] = orig + eps;
      double fp = eval(leaves);
      leaves[li].values[k] = orig - eps;
      double fm = eval(leaves);
      leaves[li].values[k] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double err = std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(analytic[k]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace reghorizon
