// Tensor, autodiff-graph, RNG, and Adam unit tests.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "reghorizon/adam.hpp"
#include "reghorizon/gradcheck_suite.hpp"
#include "reghorizon/graph.hpp"
#include "reghorizon/tensor.hpp"

using namespace reghorizon;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t = Tensor::zeros({3, 4});
  CHECK(t.rows() == 3);
  CHECK(t.cols() == 4);
  CHECK(t.size() == 12);
  t.at(2, 3) = 7.0;
  CHECK(t.values[11] == 7.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("non-finite values are rejected at node insertion") {
  Graph g;
  Tensor bad = Tensor::zeros({2});
  bad.values[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(g.constant(bad), numeric_error);
}

TEST_CASE("softmax of a uniform row is uniform") {
  Graph g;
  Var x = g.constant(Tensor({1, 3}, {0.0, 0.0, 0.0}));
  Var y = softmax_lastdim(x);
  for (int j = 0; j < 3; ++j) CHECK(y.val().values[j] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax of [0, ln 3] is [0.25, 0.75]") {
  Graph g;
  Var x = g.constant(Tensor({1, 2}, {0.0, std::log(3.0)}));
  Var y = softmax_lastdim(x);
  CHECK(y.val().values[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y.val().values[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax is invariant to a constant shift of the row") {
  Graph g;
  Tensor base({2, 3}, {0.3, -1.2, 2.0, 0.0, 0.5, -0.5});
  Tensor shifted = base;
  for (int j = 0; j < 3; ++j) {
    shifted.at(0, j) += 123.0;
    shifted.at(1, j) -= 77.0;
  }
  Var a = softmax_lastdim(g.constant(base));
  Var b = softmax_lastdim(g.constant(shifted));
  for (size_t i = 0; i < a.val().values.size(); ++i)
    CHECK(a.val().values[i] == doctest::Approx(b.val().values[i]).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  Graph g;
  RngStream rng(9, 1);
  Tensor x = gradcheck::random_tensor({5, 7}, rng, 0, 4.0);
  Var y = softmax_lastdim(g.constant(x));
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += y.val().at(r, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("dropout at rate zero is the identity") {
  Graph g;
  RngStream rng(4, 2);
  Tensor x = gradcheck::random_tensor({6, 5}, rng, 0);
  Var y = dropout(g.constant(x), 0.0, rng, 0);
  CHECK(y.val().values == x.values);
}

TEST_CASE("dropout masks are deterministic per (stream, counter)") {
  RngStream rng(12, 34);
  Tensor x = Tensor::full({20, 10}, 1.0);
  auto run = [&](uint64_t counter) {
    Graph g;
    return dropout(g.constant(x), 0.3, rng, counter).val().values;
  };
  CHECK(run(0) == run(0));        // same key, same mask
  CHECK(run(0) != run(1));        // different counter, different mask
  Graph g;
  Var y = dropout(g.constant(x), 0.3, RngStream(13, 34), 0);
  CHECK(run(0) != y.val().values);  // different seed, different mask
}

TEST_CASE("inverted dropout preserves the mean within 2%") {
  RngStream rng(7, 7);
  Tensor x = Tensor::full({100, 50}, 1.0);
  double total = 0.0;
  int trials = 20;
  for (int t = 0; t < trials; ++t) {
    Graph g;
    Var y = dropout(g.constant(x), 0.25, rng, static_cast<uint64_t>(t));
    for (double v : y.val().values) total += v;
  }
  double mean = total / (trials * 100.0 * 50.0);
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("backward through a sum gives ones") {
  Graph g;
  Var x = g.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var s = sum_all(x);
  g.backward(s);
  for (double v : x.grad()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward through an elementwise square gives 2x") {
  Graph g;
  Var x = g.leaf(Tensor({3}, {1.5, -2.0, 0.5}));
  Var s = sum_all(mul(x, x));
  g.backward(s);
  CHECK(x.grad()[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(-4.0).epsilon(1e-12));
  CHECK(x.grad()[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("repeated backward calls accumulate into grads") {
  Graph g;
  Var x = g.leaf(Tensor({2}, {1.0, 2.0}));
  Var s = sum_all(x);
  g.backward(s);
  g.backward(s);
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar losses and foreign vars") {
  Graph g;
  Var x = g.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
  Graph g2;
  Var y = g2.leaf(Tensor::scalar(1.0));
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("every primitive passes the central-difference gradient check") {
  for (const GradCheckEntry& e : gradcheck::primitive_cases()) {
    INFO(e.name, " error ", e.error);
    CHECK(e.pass);
  }
}

TEST_CASE("gradient checker flags a deliberately wrong backward") {
  GradCheckEntry e = gradcheck::injected_bug_case();
  CHECK(e.pass);       // pass here means "bug detected"
  CHECK(e.error > 1e-2);
}

TEST_CASE("check_gradients enforces a sane epsilon range") {
  auto fn = [](Graph&, std::vector<Var>& v) { return sum_all(v[0]); };
  CHECK_THROWS_AS(check_gradients(fn, {Tensor::scalar(1.0)}, 1e-9), std::invalid_argument);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  std::vector<Tensor> params = {Tensor({2}, {1.0, -2.0})};
  std::vector<Tensor> before = params;
  AdamState st = AdamState::init(params);
  adam_step(params, {{0.0, 0.0}}, st, 1e-3);
  for (size_t i = 0; i < 2; ++i)
    CHECK(params[0].values[i] == doctest::Approx(before[0].values[i]).epsilon(1e-12));
}

TEST_CASE("adam: first step moves each weight by about -lr * sign(grad)") {
  std::vector<Tensor> params = {Tensor({2}, {0.0, 0.0})};
  AdamState st = AdamState::init(params);
  double lr = 1e-2;
  adam_step(params, {{3.0, -0.5}}, st, lr);
  // bias-corrected first step: m_hat / (sqrt(v_hat) + eps) == sign(grad) up to eps
  CHECK(params[0].values[0] == doctest::Approx(-lr).epsilon(1e-6));
  CHECK(params[0].values[1] == doctest::Approx(lr).epsilon(1e-6));
}

TEST_CASE("adam converges on a quadratic") {
  std::vector<Tensor> params = {Tensor({1}, {5.0})};
  AdamState st = AdamState::init(params);
  double worst_tail = 0.0;
  for (int i = 0; i < 300; ++i) {
    double x = params[0].values[0];
    adam_step(params, {{2.0 * x}}, st, 0.05);
    double fx = params[0].values[0] * params[0].values[0];
    // momentum may oscillate locally, but the tail must stay near zero
    if (i >= 200) worst_tail = std::max(worst_tail, fx);
  }
  CHECK(worst_tail < 1e-3);
}

TEST_CASE("adam validates inputs") {
  std::vector<Tensor> params = {Tensor({1}, {0.0})};
  AdamState st = AdamState::init(params);
  CHECK_THROWS_AS(adam_step(params, {{1.0}}, st, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(adam_step(params, {{1.0, 2.0}}, st, 1e-3), std::invalid_argument);
}

TEST_CASE("counter-based rng is reproducible and uniform draws live in [0,1)") {
  RngStream a(99, 3);
  RngStream b(99, 3);
  for (uint64_t c = 0; c < 50; ++c) {
    double ua = a.uniform(c, c * 2 + 1);
    CHECK(ua == b.uniform(c, c * 2 + 1));
    CHECK(ua >= 0.0);
    CHECK(ua < 1.0);
  }
  CHECK(a.substream(1).bits(0, 0) != a.substream(2).bits(0, 0));
}

TEST_CASE("normal draws have roughly standard moments") {
  RngStream rng(2024, 0);
  double sum = 0.0, sq = 0.0;
  int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal(static_cast<uint64_t>(i), 0);
    sum += z;
    sq += z * z;
  }
  double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("grad check of a composite expression through many primitives") {
  RngStream rng(5, 5);
  auto fn = [](Graph& g, std::vector<Var>& v) {
    Var h = relu(add_rowvec(matmul(v[0], v[1]), v[2]));
    Var y = softmax_lastdim(matmul_nt(h, v[3]));
    return sum_all(mul(y, y));
  };
  double err = check_gradients(fn,
                               {gradcheck::random_tensor({3, 4}, rng, 0),
                                gradcheck::random_tensor({4, 5}, rng, 1),
                                gradcheck::random_tensor({1, 5}, rng, 2),
                                gradcheck::random_tensor({6, 5}, rng, 3)},
                               1e-5);
  CHECK(err < 1e-6);
}
