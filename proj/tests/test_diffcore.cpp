#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dagvi/adam.hpp"
#include "dagvi/gradcheck.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/tensor.hpp"

using namespace dagvi;

TEST_CASE("forward primitives match their definitions") {
  Tape t;
  CHECK(t.sigmoid(t.scalar(0.0)).scalar() == doctest::Approx(0.5));
  CHECK(t.relu(t.scalar(-3.0)).scalar() == 0.0);
  CHECK(t.relu(t.scalar(3.0)).scalar() == 3.0);
  Tensor sm = t.softmax_rows(t.constant({2}, {0.0, 0.0}));
  CHECK(sm[0] == doctest::Approx(0.5));
  CHECK(sm[1] == doctest::Approx(0.5));
}

TEST_CASE("shape mismatch is rejected with both shapes named") {
  Tape t;
  Tensor a = t.constant({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = t.constant({4, 5}, std::vector<double>(20, 1.0));
  CHECK_THROWS_WITH_AS(t.matmul(a, b), "matmul: shape mismatch [2,3] vs [4,5]",
                       std::invalid_argument);
  CHECK_THROWS_AS(t.add(a, b), std::invalid_argument);
}

TEST_CASE("non-finite forward values are rejected naming the op") {
  Tape t;
  Tensor x = t.constant({1}, {-1.0});
  CHECK_THROWS_AS(t.log(x), std::runtime_error);
}

TEST_CASE("backward: sum of squares") {
  Parameter x("x", {2});
  x.value = {1.0, 2.0};
  Tape t;
  Tensor loss = t.sum(t.square(t.param(x)));
  t.backward(loss);
  const auto* g = t.grad_of(x);
  REQUIRE(g != nullptr);
  CHECK((*g)[0] == doctest::Approx(2.0));
  CHECK((*g)[1] == doctest::Approx(4.0));
}

TEST_CASE("backward: constant loss leaves all gradients zero") {
  Parameter x("x", {2});
  x.value = {1.0, 2.0};
  Tape t;
  Tensor xt = t.param(x);
  t.square(xt);  // on tape but not part of the loss
  Tensor loss = t.scalar(7.0);
  t.backward(loss);
  const auto* g = t.grad_of(x);
  REQUIRE(g != nullptr);
  CHECK((*g)[0] == 0.0);
  CHECK((*g)[1] == 0.0);
}

TEST_CASE("backward: sigmoid(w*x) at w=0, x=1 gives grad 0.25") {
  Parameter w("w", {1});
  w.value = {0.0};
  Tape t;
  Tensor loss = t.sigmoid(t.scale(t.param(w), 1.0));
  t.backward(loss);
  CHECK((*t.grad_of(w))[0] == doctest::Approx(0.25));
}

TEST_CASE("backward rejects non-scalar loss") {
  Parameter x("x", {2});
  Tape t;
  Tensor v = t.square(t.param(x));
  CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
}

TEST_CASE("tape records a valid topological order") {
  Parameter w("w", {3, 2});
  Parameter b("b", {2});
  for (auto& v : w.value) v = 0.3;
  b.value = {0.1, -0.2};
  Tape t;
  Tensor x = t.constant({4, 3}, std::vector<double>(12, 0.5));
  Tensor h = t.relu(t.add(t.matmul(x, t.param(w)), t.param(b)));
  Tensor loss = t.mean(t.square(h));
  t.backward(loss);
  for (const auto& op : t.ops())
    for (int in : op.inputs) CHECK(in < op.output);
}

TEST_CASE("forward+backward is bit-identical for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Parameter w("w", {4, 3});
    for (auto& v : w.value) v = rng.normal();
    Tape t;
    Tensor x = t.constant({5, 4}, [&] {
      std::vector<double> xs(20);
      for (auto& v : xs) v = rng.uniform(-3.0, 3.0);
      return xs;
    }());
    Tensor loss = t.sum(t.square(t.sigmoid(t.matmul(x, t.param(w)))));
    t.backward(loss);
    std::vector<double> out;
    out.push_back(loss.scalar());
    const auto* g = t.grad_of(w);
    out.insert(out.end(), g->begin(), g->end());
    return out;
  };
  auto a = run(17), b = run(17);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

namespace {

// Loss mixing a primitive's outputs with fixed random weights so every input
// entry influences the scalar.
template <class F>
GradCheckReport check_primitive(F&& op, Shape in_shape, std::uint64_t seed,
                                double lo = -3.0, double hi = 3.0) {
  Rng rng(seed);
  Parameter x("x", in_shape);
  for (auto& v : x.value) v = rng.uniform(lo, hi);
  std::vector<double> mix;
  bool mix_ready = false;
  auto make_loss = [&](Tape& t) {
    Tensor y = op(t, t.param(x));
    if (!mix_ready) {
      mix.resize(y.numel());
      for (auto& v : mix) v = rng.uniform(-1.0, 1.0);
      mix_ready = true;
    }
    return t.sum(t.mul(y, t.constant(y.shape(), mix)));
  };
  Parameter* ps[] = {&x};
  return finite_difference_check(make_loss, ps, 1e-5, 1e-6);
}

}  // namespace

TEST_CASE("every primitive matches central finite differences within 1e-6") {
  auto expect_pass = [](const GradCheckReport& r) {
    INFO("worst: " << r.worst.param << "[" << r.worst.index << "] analytic "
                   << r.worst.analytic << " numeric " << r.worst.numeric);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-6);
  };
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.sigmoid(x); }, {3, 4}, 1));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.exp(x); }, {3, 4}, 2));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.log(x); }, {12}, 3, 0.1, 3.0));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.softplus(x); }, {3, 4}, 4));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.square(x); }, {3, 4}, 5));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.softmax_rows(x); }, {3, 4}, 6));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.transpose(x); }, {3, 4}, 7));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.pairwise_diff(x); }, {5}, 8));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.mean(t.square(x)); }, {7}, 9));
  expect_pass(
      check_primitive([](Tape& t, Tensor x) { return t.relu(x); }, {3, 4}, 10));
  expect_pass(check_primitive(
      [](Tape& t, Tensor x) {
        Tensor c = t.constant({4, 2}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.6, -0.1});
        return t.matmul(x, c);
      },
      {3, 4}, 11));
  expect_pass(check_primitive(
      [](Tape& t, Tensor x) {
        Tensor v = t.constant({4}, {0.5, -1.0, 2.0, 0.25});
        return t.mul(x, v);  // row broadcast
      },
      {3, 4}, 12));
  expect_pass(check_primitive(
      [](Tape& t, Tensor x) {
        std::vector<double> m(12, 1.0);
        m[0] = m[5] = m[10] = 0.0;
        return t.mask(x, m);
      },
      {3, 4}, 13));
  expect_pass(check_primitive([](Tape& t, Tensor x) { return t.col(x, 2); }, {5, 4}, 14));
  expect_pass(check_primitive(
      [](Tape& t, Tensor x) { return t.sub(t.square(x), t.scale(x, 0.5)); }, {3, 4}, 15));
}

TEST_CASE("gradient check: quadratic loss is exact to rounding") {
  Parameter x("x", {3});
  x.value = {1.0, -2.0, 0.5};
  auto make_loss = [&](Tape& t) { return t.sum(t.square(t.param(x))); };
  Parameter* ps[] = {&x};
  auto r = finite_difference_check(make_loss, ps, 1e-5, 1e-8);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("gradient check: injected sign flip is caught") {
  Parameter x("x", {3});
  x.value = {1.0, -2.0, 0.5};
  auto make_loss = [&](Tape& t) {
    Tensor xt = t.param(x);
    // Straight-through with negated forward values: the backward rule keeps
    // the original sign, so the reported gradient disagrees with the loss.
    std::vector<double> flipped(x.value);
    for (auto& v : flipped) v = -v;
    return t.sum(t.square(t.straight_through(xt, flipped)));
  };
  Parameter* ps[] = {&x};
  auto r = finite_difference_check(make_loss, ps, 1e-5, 1e-6);
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 1e-2);
}

TEST_CASE("gradient check rejects epsilon outside [1e-6, 1e-4]") {
  Parameter x("x", {1});
  auto make_loss = [&](Tape& t) { return t.sum(t.param(x)); };
  Parameter* ps[] = {&x};
  CHECK_THROWS_AS(finite_difference_check(make_loss, ps, 1e-2, 1e-6),
                  std::invalid_argument);
}

TEST_CASE("adam: zero gradient and zero weight decay leave params unchanged") {
  Parameter w("w", {3});
  w.value = {1.0, -2.0, 3.0};
  auto before = w.value;
  AdamOptimizer opt({.lr = 0.1}, {&w});
  Tape t;
  Tensor loss = t.sum(t.scale(t.param(w), 0.0));
  t.backward(loss);
  opt.step(t);
  CHECK(w.value == before);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: one step on f(w)=w^2 moves toward zero") {
  Parameter w("w", {1});
  w.value = {1.0};
  AdamOptimizer opt({.lr = 0.1}, {&w});
  Tape t;
  Tensor loss = t.sum(t.square(t.param(w)));
  t.backward(loss);
  opt.step(t);
  CHECK(w.value[0] < 1.0);
  CHECK(w.value[0] > 0.0);
}

TEST_CASE("adam: bias-corrected first step magnitude is ~lr at any gradient scale") {
  for (double g : {1e-3, 1.0, 1e3}) {
    Parameter w("w", {1});
    w.value = {5.0};
    AdamOptimizer opt({.lr = 0.05}, {&w});
    Tape t;
    Tensor loss = t.scale(t.param(w), g);
    t.backward(loss);
    opt.step(t);
    // step 1: mhat = g, vhat = g^2, so |delta| = lr * |g| / (|g| + eps)
    double delta = std::abs(w.value[0] - 5.0);
    CHECK(delta == doctest::Approx(0.05).epsilon(1e-4));
  }
}

TEST_CASE("adam: non-finite gradient aborts naming the parameter") {
  Parameter x("x", {1});
  x.value = {700.0};
  Tape t;
  // All forward values are finite, but the exp backward overflows and the two
  // branches cancel to NaN.
  Tensor xt = t.param(x);
  Tensor a = t.exp(xt);
  Tensor b = t.exp(t.scale(xt, 1.0));
  Tensor loss = t.sum(t.mul(t.sub(a, b), a));
  t.backward(loss);
  AdamOptimizer opt({.lr = 0.1}, {&x});
  CHECK_THROWS_WITH_AS(opt.step(t), "adam: non-finite gradient for parameter 'x' at index 0",
                       std::runtime_error);
}

TEST_CASE("adam: decoupled weight decay shrinks a parameter with zero gradient") {
  Parameter w("w", {1});
  w.value = {2.0};
  AdamOptimizer opt({.lr = 0.1, .weight_decay = 1e-4}, {&w});
  Tape t;
  Tensor loss = t.sum(t.scale(t.param(w), 0.0));
  t.backward(loss);
  opt.step(t);
  CHECK(w.value[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 1e-4)));
}
