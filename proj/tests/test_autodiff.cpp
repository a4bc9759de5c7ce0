#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "trufll/autodiff.hpp"
#include "trufll/errors.hpp"

using namespace trufll;
using namespace trufll::ad;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t({r, c});
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Scalarizes an arbitrary-shaped output with fixed random weights so every
// output coordinate contributes to the checked gradient.
Var project(Tape& tape, Var y, const Tensor& weights) { return sum(mul(y, tape.constant(weights))); }

}  // namespace

TEST_CASE("forward examples") {
  Tape t;
  Var a = t.constant(Tensor::row({1, 2}));
  Var b = t.constant(Tensor::row({3, 4}));
  CHECK(add(a, b).value() == Tensor::row({4, 6}));

  Var z = t.constant(Tensor::row({0, 0, 0, 0}));
  for (double p : softmax(z).value().data()) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));

  Var m1 = t.constant(Tensor({2, 3}, 1.0));
  Var m2 = t.constant(Tensor({3, 1}, 1.0));
  Var mm = matmul(m1, m2);
  CHECK(mm.value().shape() == std::vector<std::size_t>{2, 1});
  CHECK(mm.value()[0] == 3.0);
  CHECK(mm.value()[1] == 3.0);
}

TEST_CASE("shape mismatch and non-finite outputs raise") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ConfigError);
  CHECK_THROWS_AS(add(a, t.constant(Tensor({3, 2}))), ConfigError);
  CHECK_THROWS_AS(slice(a, 2, 5), ConfigError);
  std::vector<int> bad{7};
  CHECK_THROWS_AS(gather_rows(a, bad), ConfigError);

  Var neg = t.constant(Tensor::row({-1.0}));
  try {
    log(neg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("backward of x*x at 3 is 6") {
  Tensor x = Tensor::scalar(3.0);
  Tape t;
  Var xv = t.param(x);
  Gradients g = t.backward(mul(xv, xv));
  CHECK(g.of(x)[0] == 6.0);
}

TEST_CASE("non-scalar loss is a usage error") {
  Tensor x({2, 2}, 1.0);
  Tape t;
  Var y = tanh(t.param(x));
  CHECK_THROWS_AS(t.backward(y), UsageError);
}

TEST_CASE("unused parameter gets a zero gradient") {
  Tensor used = Tensor::row({1.0, 2.0});
  Tensor unused({3, 2}, 5.0);
  Tape t;
  t.param(unused);
  Gradients g = t.backward(sum(mul(t.param(used), t.param(used))));
  Tensor gu = g.of(unused);
  CHECK(gu.shape() == unused.shape());
  for (double v : gu.data()) CHECK(v == 0.0);
}

TEST_CASE("cross-entropy through softmax has gradient softmax minus onehot") {
  std::mt19937_64 rng(11);
  Tensor z = random_tensor(rng, 1, 5, -2, 2);
  const Tensor onehot = Tensor::row({0, 0, 1, 0, 0});
  auto loss = [&](Tape& t) {
    Var p = softmax(t.param(z));
    Var picked = sum(mul(p, t.constant(onehot)));
    return mul(log(picked), t.constant(Tensor::scalar(-1.0)));
  };
  Tape t;
  Gradients g = t.backward(loss(t));
  Tape t2;
  const Tensor p = softmax(t2.constant(z)).value();
  for (std::size_t i = 0; i < 5; ++i) CHECK(g.of(z)[i] == doctest::Approx(p[i] - onehot[i]).epsilon(1e-12));

  Tensor* params[] = {&z};
  CHECK(check_gradients(loss, params, 1e-5) <= 1e-7);
}

TEST_CASE("check_gradients on a quadratic form and on a constant") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(rng, 1, 4);
  Tensor A = random_tensor(rng, 4, 4);
  auto quad = [&](Tape& t) {
    Var xv = t.param(x);
    Var xa = matmul(xv, t.param(A));
    return sum(mul(xa, xv));
  };
  Tensor* params[] = {&x, &A};
  CHECK(check_gradients(quad, params, 1e-5) <= 1e-7);

  auto constant = [&](Tape& t) {
    t.param(x);
    return sum(t.constant(Tensor::row({1.0, 2.0})));
  };
  CHECK(check_gradients(constant, params, 1e-5) == 0.0);
  CHECK_THROWS_AS(check_gradients(constant, params, 1e-2), UsageError);
}

namespace {

struct PrimitiveCase {
  const char* name;
  std::function<Var(Tape&, std::vector<Var>&)> build;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  double lo = -1.0, hi = 1.0;
};

std::vector<PrimitiveCase> primitive_cases() {
  static const std::vector<unsigned char> keep{1, 0, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1};
  static const std::vector<int> rows{2, 0, 2, 1};
  return {
      {"matmul", [](Tape&, std::vector<Var>& in) { return matmul(in[0], in[1]); }, {{3, 4}, {4, 2}}},
      {"add", [](Tape&, std::vector<Var>& in) { return add(in[0], in[1]); }, {{3, 4}, {3, 4}}},
      {"add_broadcast", [](Tape&, std::vector<Var>& in) { return add(in[0], in[1]); }, {{3, 4}, {1, 4}}},
      {"mul", [](Tape&, std::vector<Var>& in) { return mul(in[0], in[1]); }, {{3, 4}, {3, 4}}},
      {"mul_scalar", [](Tape&, std::vector<Var>& in) { return mul(in[0], in[1]); }, {{3, 4}, {1, 1}}},
      {"concat_cols", [](Tape&, std::vector<Var>& in) { return concat({in[0], in[1]}); }, {{3, 2}, {3, 3}}},
      {"concat_rows",
       [](Tape&, std::vector<Var>& in) { return concat({in[0], in[1]}, Axis::Rows); },
       {{2, 3}, {1, 3}}},
      {"slice", [](Tape&, std::vector<Var>& in) { return slice(in[0], 1, 3); }, {{3, 4}}},
      {"gather_rows", [](Tape&, std::vector<Var>& in) { return gather_rows(in[0], rows); }, {{3, 4}}},
      {"tanh", [](Tape&, std::vector<Var>& in) { return tanh(in[0]); }, {{3, 4}}},
      {"sigmoid", [](Tape&, std::vector<Var>& in) { return sigmoid(in[0]); }, {{3, 4}}},
      {"exp", [](Tape&, std::vector<Var>& in) { return exp(in[0]); }, {{3, 4}}},
      {"log", [](Tape&, std::vector<Var>& in) { return log(in[0]); }, {{3, 4}}, 0.5, 2.0},
      {"additive_mask", [](Tape&, std::vector<Var>& in) { return softmax(additive_mask(in[0], keep)); }, {{3, 4}}},
      {"softmax", [](Tape&, std::vector<Var>& in) { return softmax(in[0]); }, {{3, 4}}},
      {"log_softmax", [](Tape&, std::vector<Var>& in) { return log_softmax(in[0]); }, {{3, 4}}},
      {"pick", [](Tape&, std::vector<Var>& in) { return pick(in[0], rows); }, {{4, 3}}},
      {"sum_all", [](Tape&, std::vector<Var>& in) { return sum(in[0]); }, {{3, 4}}},
      {"sum_cols", [](Tape&, std::vector<Var>& in) { return sum(in[0], Axis::Cols); }, {{3, 4}}},
      {"mean", [](Tape&, std::vector<Var>& in) { return mean(in[0]); }, {{3, 4}}},
  };
}

}  // namespace

TEST_CASE("every primitive matches central differences on random inputs") {
  std::mt19937_64 rng(2024);
  for (const auto& pc : primitive_cases()) {
    CAPTURE(pc.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Tensor> inputs;
      for (auto [r, c] : pc.shapes) inputs.push_back(random_tensor(rng, r, c, pc.lo, pc.hi));
      Tensor weights;
      {
        Tape probe;
        std::vector<Var> vs;
        for (auto& x : inputs) vs.push_back(probe.constant(x));
        const Tensor& y = pc.build(probe, vs).value();
        weights = random_tensor(rng, y.rows(), y.cols());
      }
      auto loss = [&](Tape& t) {
        std::vector<Var> vs;
        for (auto& x : inputs) vs.push_back(t.param(x));
        return project(t, pc.build(t, vs), weights);
      };
      std::vector<Tensor*> ptrs;
      for (auto& x : inputs) ptrs.push_back(&x);
      worst = std::max(worst, check_gradients(loss, ptrs, 1e-5));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(3);
  Tensor w = random_tensor(rng, 4, 3);
  Tensor x = random_tensor(rng, 2, 4);
  auto f1 = [&](Tape& t) { return sum(tanh(matmul(t.constant(x), t.param(w)))); };
  auto f2 = [&](Tape& t) { return mean(exp(matmul(t.constant(x), t.param(w)))); };
  Tape ta, tb, tc;
  const Tensor g1 = ta.backward(f1(ta)).of(w);
  const Tensor g2 = tb.backward(f2(tb)).of(w);
  const Tensor g12 = tc.backward(add(f1(tc), f2(tc))).of(w);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(g12[i] - (g1[i] + g2[i])) <= 1e-12);
}

TEST_CASE("replaying a tape yields bit-identical gradients") {
  std::mt19937_64 rng(9);
  Tensor w = random_tensor(rng, 5, 5);
  Tensor b = random_tensor(rng, 1, 5);
  auto f = [&](Tape& t) {
    std::mt19937_64 local(1);
    Var h = t.constant(random_tensor(local, 3, 5));
    for (int i = 0; i < 4; ++i) h = tanh(add(matmul(h, t.param(w)), t.param(b)));
    return sum(softmax(h));
  };
  Tape t1, t2;
  CHECK(t1.backward(f(t1)).of(w) == t2.backward(f(t2)).of(w));
}

TEST_CASE("log_softmax and pick") {
  Tape t;
  Tensor z({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 4.0});
  const Tensor ls = log_softmax(t.constant(z)).value();
  const Tensor sm = softmax(t.constant(z)).value();
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(ls[i] == doctest::Approx(std::log(sm[i])).epsilon(1e-14));
  const std::vector<int> cols{2, 0};
  const Tensor picked = pick(t.constant(z), cols).value();
  CHECK(picked.shape() == std::vector<std::size_t>{2, 1});
  CHECK(picked[0] == 3.0);
  CHECK(picked[1] == -1.0);
  const std::vector<unsigned char> keep{1, 0, 1};
  const Tensor masked = log_softmax(additive_mask(t.constant(Tensor::row({0.5, 9.0, 0.5})), keep)).value();
  CHECK(masked[0] == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(masked[1] < -1e29);
  CHECK(std::exp(masked[1]) == 0.0);
  const std::vector<int> bad{3, 0};
  CHECK_THROWS_AS(pick(t.constant(z), bad), ConfigError);
}

TEST_CASE("masked softmax drives masked entries to zero") {
  Tape t;
  const std::vector<unsigned char> keep{1, 0, 1, 0};
  Var p = softmax(additive_mask(t.constant(Tensor::row({2, 1, 0, -1})), keep));
  CHECK(p.value()[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-12));
  CHECK(p.value()[1] <= 1e-300);
  CHECK(p.value()[3] <= 1e-300);
}

TEST_CASE("Adam moves against the gradient and clipping bounds the norm") {
  Tensor x = Tensor::row({1.0, -2.0});
  Tape t;
  Gradients g = t.backward(sum(mul(t.param(x), t.param(x))));
  Adam opt(0.1);
  Tensor* ps[] = {&x};
  Gradients g2 = g;
  const double norm = clip_global_norm(g2, 1.0);
  CHECK(norm == doctest::Approx(std::sqrt(4.0 + 16.0)));
  CHECK(g2.global_norm() == doctest::Approx(1.0));
  opt.step(ps, g);
  CHECK(x[0] == doctest::Approx(0.9));
  CHECK(x[1] == doctest::Approx(-1.9));
}
