#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "ofb/gradcheck.hpp"
#include "ofb/regularizers.hpp"
#include "ofb/tensor.hpp"

using namespace ofb;
using testing::values;

TEST_CASE("primitive values") {
  const auto p = values(softmax(Tensor::zeros({4})));
  for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(std::fabs(tan(Tensor::scalar(std::numbers::pi / 4)).item() - 1.0) < 1e-12);
  CHECK(abs(Tensor::from({-2.0, 3.0}, {2}))[0] == 2.0);
  CHECK(clamp(Tensor::from({-2.0, 0.3, 5.0}, {3}), 0.0, 1.0)[2] == 1.0);
}

TEST_CASE("matmul matches a triple loop") {
  const auto a = testing::random_vector(2 * 3 * 5, 1);
  const auto b = testing::random_vector(2 * 5 * 4, 2);
  const auto c = values(matmul(Tensor::from(a, {2, 3, 5}), Tensor::from(b, {2, 5, 4})));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 5; ++k) s += a[n * 15 + i * 5 + k] * b[n * 20 + k * 4 + j];
        CHECK(c[n * 12 + i * 4 + j] == doctest::Approx(s).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("backward on closed-form gradients") {
  Tensor x = Tensor::from({0.0}, {1}, true);
  backward(sum(sigmoid(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.25));

  Tensor alpha = Tensor::from({0.0, 0.0}, {2}, true);
  backward(entropy(softmax(alpha)));
  CHECK(std::fabs(alpha.grad()[0]) < 1e-12);
  CHECK(std::fabs(alpha.grad()[1]) < 1e-12);

  Tensor q = Tensor::scalar(3.0, true);
  backward(mul(q, q));
  CHECK(q.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(gradient_check([](const Tensor& v) { return mul(v, v); }, Tensor::scalar(3.0)) < 1e-9);

  Tensor omega = Tensor::scalar(0.5, true);
  backward(tangent_activation(omega));
  CHECK(omega.grad()[0] == doctest::Approx(-std::numbers::pi).epsilon(1e-12));
  CHECK(gradient_check([](const Tensor& v) { return tangent_activation(v); },
                       Tensor::scalar(0.5)) < 1e-6);
}

TEST_CASE("entropy term gradcheck at an interior point") {
  std::vector<double> p{0.1, 0.25, 0.4, 0.25};
  const double err = gradient_check(
      [](const Tensor& v) { return neg(sum(mul(v, log(v)))); }, Tensor::from(p, {4}), 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("gradients accumulate over shared inputs") {
  Tensor x = Tensor::from({1.5, -2.0}, {2}, true);
  backward(sum(add(mul(x, x), x)));
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("graph reuse requires reset") {
  Tensor x = Tensor::from({1.0, 2.0}, {2}, true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), StateError);
  reset_graph(loss);
  backward(loss);
  CHECK(x.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("contract violations") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(log(Tensor::from({-1.0}, {1})), NumericError);
  CHECK_THROWS_AS(exp(Tensor::from({1000.0}, {1})), NumericError);
  CHECK_THROWS(gradient_check([](const Tensor& v) { return v; }, Tensor::zeros({2})));
}

TEST_CASE("weighted layer norm ignores zero-weight channels") {
  const std::vector<double> x{0.3, 100.0, -1.2, 2.5};
  const Tensor w = Tensor::from({1.0, 0.0, 1.0, 1.0}, {4});
  const auto y = values(layer_norm(Tensor::from(x, {1, 4}), Tensor::full({4}, 1.0),
                                   Tensor::zeros({4}), w));
  const double mu = (0.3 - 1.2 + 2.5) / 3.0;
  const double var =
      ((0.3 - mu) * (0.3 - mu) + (-1.2 - mu) * (-1.2 - mu) + (2.5 - mu) * (2.5 - mu)) / 3.0;
  CHECK(y[0] == doctest::Approx((0.3 - mu) / std::sqrt(var + 1e-5)).epsilon(1e-12));
  CHECK(y[3] == doctest::Approx((2.5 - mu) / std::sqrt(var + 1e-5)).epsilon(1e-12));
}

TEST_CASE("mac counter") {
  MacCounter counter;
  matmul(Tensor::zeros({3, 5}), Tensor::zeros({5, 7}));
  matmul(Tensor::zeros({2, 3, 4}), Tensor::zeros({2, 4, 2}));
  CHECK(counter.count() == 3u * 5 * 7 + 2u * 3 * 4 * 2);
}

TEST_CASE("a corrupted backward rule is caught") {
  const Tensor theta = Tensor::from({0.3, -0.7, 1.1}, {3});
  auto f = [](const Tensor& v) { return sum(mul(v, v)); };
  CHECK(gradient_check(f, theta) < 1e-8);
  set_backward_fault("mul", 1.01);
  const double bad = gradient_check(f, theta);
  set_backward_fault("", 1.0);
  CHECK(bad > 1e-4);
}

TEST_CASE("gradcheck suite stays below tolerance") {
  for (const auto& r : gradcheck_suite()) {
    INFO(r.name);
    CHECK(r.max_rel_error < 1e-4);
  }
}
