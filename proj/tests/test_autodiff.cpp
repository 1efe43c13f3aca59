#include <doctest.h>

#include <cmath>
#include <random>

#include "hmslab/autodiff.hpp"
#include "hmslab/error.hpp"
#include "test_support.hpp"

using namespace hmslab;
using namespace hmslab::ad;

TEST_SUITE("autodiff") {

TEST_CASE("softmax of equal logits is uniform") {
  Graph g;
  const Var s = softmax_rows(g.constant(Tensor::row({0.0, 0.0})));
  CHECK(s.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.value()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax rows are positive and sum to one") {
  std::mt19937_64 rng(3);
  Graph g;
  const Var s = softmax_rows(g.constant(testing::random_tensor(rng, 6, 9, 30.0)));
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(s.value()(r, c) > 0.0);
      total += s.value()(r, c);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("identity matmul returns the operand") {
  std::mt19937_64 rng(5);
  const Tensor m = testing::random_tensor(rng, 3, 3, 1.0);
  Graph g;
  CHECK(matmul(g.constant(Tensor::identity(3)), g.constant(m)).value() == m);
}

TEST_CASE("matmul agrees with a triple loop") {
  std::mt19937_64 rng(7);
  const Tensor a = testing::random_tensor(rng, 4, 5, 1.0);
  const Tensor b = testing::random_tensor(rng, 5, 3, 1.0);
  Graph g;
  const Tensor got = matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += a(i, k) * b(k, j);
      CHECK(std::abs(got(i, j) - acc) < 1e-12);
    }
  }
}

TEST_CASE("saturated cross-entropy is nearly zero") {
  Graph g;
  const std::size_t target = 1;
  const Var loss = cross_entropy(g.constant(Tensor::row({0.0, 20.0})), std::span(&target, 1));
  CHECK(loss.value().item() < 1e-8);
}

TEST_CASE("gradient of mean is uniform") {
  Graph g;
  const Var x = g.variable(Tensor::row({1.0, -2.0, 3.0, 0.5}));
  g.backward(mean(x));
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.25);
}

TEST_CASE("hinge subgradient") {
  Graph g;
  const Var x = g.variable(Tensor::row({0.25, 0.5, 0.4}));
  g.backward(sum(hinge(x, 0.4)));
  CHECK(x.grad()[0] == -1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);  // tie at the threshold
}

TEST_CASE("backward twice doubles every gradient") {
  std::mt19937_64 rng(11);
  Graph g;
  const Var w = g.variable(testing::random_tensor(rng, 3, 4, 1.0));
  const Var x = g.constant(testing::random_tensor(rng, 2, 3, 1.0));
  const Var loss = mean(tanh(matmul(x, w)));
  g.backward(loss);
  const Tensor once = w.grad();
  g.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("non-scalar loss is rejected") {
  Graph g;
  const Var x = g.variable(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(g.backward(x), Error);
}

TEST_CASE("shape mismatch names both shapes") {
  Graph g;
  const Var a = g.constant(Tensor(2, 3));
  const Var b = g.constant(Tensor(4, 5));
  try {
    (void)matmul(a, b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
}

TEST_CASE("masked positions receive no gradient") {
  Graph g;
  const Var a = g.variable(Tensor::row({1.0, 2.0, 3.0}));
  Tensor mask(1, 3, 0.0);
  mask[1] = 1.0;
  g.backward(sum(softmax_rows(masked_fill(a, mask, -1e30))));
  CHECK(a.grad()[1] == 0.0);
}

TEST_CASE("non-finite results are rejected") {
  Graph g;
  const Var a = g.constant(Tensor::row({1e308}));
  CHECK_THROWS_AS((void)scale(a, 10.0), Error);
}

TEST_CASE("grad_check on x squared") {
  Tensor x = Tensor::scalar(3.0);
  std::vector<Tensor> params = {x};
  const auto report = grad_check(
      [&](Graph&, std::span<const Var> p) {
        const Var y = mul(p[0], p[0]);
        return sum(y);
      },
      params, 1e-5, 1e-7);
  CHECK(report.passed);
  Graph g;
  const Var v = g.variable(Tensor::scalar(3.0));
  g.backward(mul(v, v));
  CHECK(std::abs(v.grad().item() - 6.0) < 1e-7);
}

TEST_CASE("grad_check on a constant function") {
  std::vector<Tensor> params = {Tensor::row({1.0, 2.0})};
  const auto report = grad_check(
      [](Graph& g, std::span<const Var>) { return g.constant(Tensor::scalar(4.0)); }, params,
      1e-5, 1e-3);
  CHECK(report.passed);
  CHECK(report.worst == 0.0);
}

TEST_CASE("grad_check rejects a non-deterministic function") {
  std::vector<Tensor> params = {Tensor::row({1.0})};
  int calls = 0;
  CHECK_THROWS_AS(grad_check(
                      [&](Graph&, std::span<const Var> p) {
                        return add_scalar(sum(p[0]), static_cast<double>(++calls));
                      },
                      params, 1e-5, 1e-3),
                  Error);
}

TEST_CASE("grad_check on a random three-layer MLP") {
  std::mt19937_64 rng(13);
  const Tensor x = testing::random_tensor(rng, 4, 5, 1.0);
  std::vector<Tensor> params = {
      testing::random_tensor(rng, 5, 6, 0.5), testing::random_tensor(rng, 1, 6, 0.1),
      testing::random_tensor(rng, 6, 6, 0.5), testing::random_tensor(rng, 1, 6, 0.1),
      testing::random_tensor(rng, 6, 3, 0.5)};
  const std::vector<std::size_t> targets = {0, 2, 1, 2};
  const auto report = grad_check(
      [&](Graph& g, std::span<const Var> p) {
        Var h = tanh(add_row(matmul(g.constant(x), p[0]), p[1]));
        h = gelu(add_row(matmul(h, p[2]), p[3]));
        return cross_entropy(matmul(h, p[4]), targets);
      },
      params, 1e-5, 1e-6);
  CHECK(report.passed);
}

TEST_CASE("grad_check over every primitive") {
  std::mt19937_64 rng(17);
  std::vector<Tensor> params = {
      testing::random_tensor(rng, 3, 4, 1.0), testing::random_tensor(rng, 3, 4, 1.0),
      testing::random_tensor(rng, 1, 4, 1.0), testing::random_tensor(rng, 1, 4, 1.0),
      testing::random_tensor(rng, 5, 4, 1.0)};
  const std::vector<std::size_t> ids = {4, 0, 2};
  Tensor mask(3, 4, 0.0);
  mask(0, 3) = 1.0;
  mask(2, 1) = 1.0;
  const auto report = grad_check(
      [&](Graph&, std::span<const Var> p) {
        Var a = layer_norm_rows(p[0], p[2], p[3]);
        Var b = mul(sub(p[1], a), add(p[1], scale(a, 0.5)));
        Var e = gather_rows(p[4], ids);
        Var s = softmax_rows(masked_fill(add(b, e), mask, -1e30));
        Var left = slice_cols(s, 0, 2);
        Var right = slice_cols(matmul_nt(e, p[1]), 1, 2);
        std::vector<Var> cols = {right, left};
        Var c = concat_cols(cols);
        std::vector<Var> rows = {slice_rows(c, 1, 2), slice_rows(add_scalar(c, 0.1), 0, 1)};
        Var r = concat_rows(rows);
        return add(mean(hinge(r, 0.3)), sum(tanh(gelu(r))));
      },
      params, 1e-5, 1e-6);
  CHECK(report.passed);
}

}  // TEST_SUITE
