#include <cmath>
#include <functional>
#include <limits>

#include "ambl/autodiff.hpp"
#include "ambl/rng.hpp"
#include "doctest.h"

using namespace ambl;
using ad::Var;
using TapeD = ad::Tape<double>;

namespace {

Tensor<double> randn(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (auto& x : t.values()) x = scale * standard_normal(rng);
  return t;
}

// Scalar loss sum(y · w) for a fixed random column w, so every output entry matters.
Var weighted_sum(TapeD& t, Var y, uint64_t seed = 99) {
  const int n = t.value(y).cols();
  return ad::sum(t, ad::matmul(t, y, t.constant(randn({n, 1}, seed))));
}

using Builder = std::function<Var(TapeD&, const std::vector<Var>&)>;

double max_grad_error(std::vector<Tensor<double>>& params, const Builder& build, int samples = 0, double eps = 1e-5) {
  std::vector<Tensor<double>> grads;
  auto eval = [&](bool with_grad) {
    TapeD t;
    std::vector<Var> vs;
    for (auto& p : params) vs.push_back(t.parameter(p));
    const Var loss = build(t, vs);
    if (with_grad) {
      t.backward(loss);
      for (auto v : vs) grads.push_back(t.grad(v));
    }
    return t.value(loss)[0];
  };
  eval(true);
  std::vector<std::span<double>> ps;
  std::vector<std::span<const double>> gs;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ps.push_back(params[i].span());
    gs.push_back(grads[i].span());
  }
  return ad::grad_check([&] { return eval(false); }, ps, gs, eps, samples, 5).max_relative_error;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("forward fixed points") {
    CHECK(ad::gelu_value(0.0) == 0.0);
    TapeD t;
    const Var s = t.constant(randn({1, 1}, 1));
    CHECK(t.value(ad::causal_softmax(t, s))[0] == 1.0);
    const Var logits = t.constant(Tensor<double>({1, 2}));
    CHECK(t.value(ad::cross_entropy(t, logits, 0))[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(t.value(ad::cross_entropy(t, logits, 1))[0] == doctest::Approx(0.6931).epsilon(1e-4));
  }

  TEST_CASE("sum of a parameter has an all-ones gradient; a disconnected parameter gets zeros") {
    TapeD t;
    Tensor<double> w = randn({3, 4}, 2), u = randn({2, 2}, 3);
    const Var vw = t.parameter(w), vu = t.parameter(u);
    const Var loss = ad::sum(t, vw);
    t.backward(loss);
    CHECK(t.grad(vw) == Tensor<double>({3, 4}, 1.0));
    CHECK(t.grad(vu) == Tensor<double>({2, 2}, 0.0));
  }

  TEST_CASE("non-scalar loss is rejected") {
    TapeD t;
    Tensor<double> w = randn({2, 2}, 4);
    const Var v = t.parameter(w);
    CHECK_THROWS_AS(t.backward(v), ad::ShapeError);
  }

  TEST_CASE("shape errors name the operand") {
    TapeD t;
    const Var a = t.constant(randn({2, 3}, 5));
    const Var b = t.constant(randn({4, 5}, 6));
    try {
      ad::matmul(t, a, b);
      FAIL("expected ShapeError");
    } catch (const ad::ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("matmul") != std::string::npos);
      CHECK(msg.find("'b'") != std::string::npos);
    }
  }

  TEST_CASE("non-finite outputs raise NumericError") {
    TapeD t;
    const Var a = t.constant(Tensor<double>({1, 2}, 1e300));
    CHECK_THROWS_AS(ad::scale(t, a, 1e300), ad::NumericError);
  }

  TEST_CASE("quadratic w'w/2 has gradient w") {
    std::vector<Tensor<double>> p{randn({1, 16}, 7)};
    const double err = max_grad_error(p, [](TapeD& t, const std::vector<Var>& v) {
      return ad::sum(t, ad::scale(t, ad::matmul_bt(t, v[0], v[0]), 0.5));
    }, 0, 1e-3);  // no truncation error on a quadratic
    CHECK(err < 1e-9);
  }

  TEST_CASE("cross-entropy gradient equals softmax minus one-hot") {
    Tensor<double> z({1, 2}, std::vector<double>{0.3, -1.2});
    TapeD t;
    const Var vz = t.parameter(z);
    t.backward(ad::cross_entropy(t, vz, 1));
    const double p0 = 1.0 / (1.0 + std::exp(-1.2 - 0.3));
    const auto g = t.grad(vz);
    CHECK(std::abs(g[0] - p0) < 1e-12);
    CHECK(std::abs(g[1] - (1.0 - p0 - 1.0)) < 1e-12);

    std::vector<Tensor<double>> p{randn({1, 2}, 8)};
    CHECK(max_grad_error(p, [](TapeD& tp, const std::vector<Var>& v) { return ad::cross_entropy(tp, v[0], 0); }) < 1e-4);
  }

  TEST_CASE("every primitive passes a central-difference check") {
    SUBCASE("matmul") {
      std::vector<Tensor<double>> p{randn({3, 4}, 10), randn({4, 5}, 11)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) { return weighted_sum(t, ad::matmul(t, v[0], v[1])); }) < 1e-4);
    }
    SUBCASE("matmul_bt") {
      std::vector<Tensor<double>> p{randn({3, 4}, 12), randn({5, 4}, 13)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) { return weighted_sum(t, ad::matmul_bt(t, v[0], v[1])); }) < 1e-4);
    }
    SUBCASE("add and add_bias") {
      std::vector<Tensor<double>> p{randn({3, 4}, 14), randn({3, 4}, 15), randn({4}, 16)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) {
              return weighted_sum(t, ad::add_bias(t, ad::add(t, v[0], v[1]), v[2]));
            }) < 1e-4);
    }
    SUBCASE("scale") {
      std::vector<Tensor<double>> p{randn({2, 3}, 17)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) { return weighted_sum(t, ad::scale(t, v[0], -0.37)); }) < 1e-4);
    }
    SUBCASE("embedding with repeated ids") {
      std::vector<Tensor<double>> p{randn({5, 3}, 18)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) {
              static const int ids[] = {0, 2, 2, 4, 1, 2};
              return weighted_sum(t, ad::embedding(t, v[0], std::span<const int>(ids)));
            }) < 1e-4);
    }
    SUBCASE("layer_norm") {
      std::vector<Tensor<double>> p{randn({4, 6}, 19), randn({6}, 20), randn({6}, 21)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) { return weighted_sum(t, ad::layer_norm(t, v[0], v[1], v[2])); }) <
            1e-6);
    }
    SUBCASE("gelu") {
      std::vector<Tensor<double>> p{randn({3, 5}, 22, 2.0)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) { return weighted_sum(t, ad::gelu(t, v[0])); }) < 1e-4);
    }
    SUBCASE("causal_softmax, square and offset") {
      std::vector<Tensor<double>> p{randn({5, 5}, 23), randn({3, 6}, 24)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) {
              return ad::add(t, weighted_sum(t, ad::causal_softmax(t, v[0])),
                             weighted_sum(t, ad::causal_softmax(t, v[1], 3), 7));
            }) < 1e-4);
    }
    SUBCASE("slice, concat and select") {
      std::vector<Tensor<double>> p{randn({4, 6}, 25)};
      CHECK(max_grad_error(p, [](TapeD& t, const auto& v) {
              const Var left = ad::slice_cols(t, v[0], 0, 2);
              const Var right = ad::slice_cols(t, v[0], 3, 3);
              const Var parts[] = {right, left};
              return weighted_sum(t, ad::select_rows(t, ad::concat_cols(t, std::span<const Var>(parts)), 1, 2));
            }) < 1e-4);
    }
  }

  TEST_CASE("gradients accumulate over shared uses") {
    std::vector<Tensor<double>> p{randn({3, 3}, 26)};
    CHECK(max_grad_error(p, [](TapeD& t, const auto& v) {
            const Var y = ad::matmul(t, v[0], v[0]);
            return weighted_sum(t, ad::add(t, y, ad::gelu(t, v[0])));
          }) < 1e-4);
  }
}
