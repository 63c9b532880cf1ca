#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cvar/losses.hpp"
#include "cvar/objective.hpp"
#include "cvar/rng.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace cvar;

namespace {
Example ex(std::initializer_list<double> xs, double y) {
  Vector x(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double v : xs) x[i++] = v;
  return Example(std::move(x), y);
}
Vector vec(std::initializer_list<double> vs) {
  Vector v(static_cast<Eigen::Index>(vs.size()));
  Eigen::Index i = 0;
  for (double x : vs) v[i++] = x;
  return v;
}
}  // namespace

TEST_CASE("ridge_value hand-checked") {
  CHECK(ridge_value(0.1, Vector::Zero(2), ex({1, 1}, 2)) ==
        doctest::Approx(4.0));
  CHECK(ridge_value(0.1, vec({1, 1}), ex({1, 1}, 2)) == doctest::Approx(0.2));
  CHECK(ridge_value(0.1, vec({2, 0}), ex({1, 1}, 1)) == doctest::Approx(1.4));
  CHECK_THROWS_AS(ridge_value(0.1, vec({1, 1, 1}), ex({1, 1}, 2)),
                  ValidationError);
}

TEST_CASE("ridge_grad hand-checked") {
  const Vector g0 = ridge_grad(0.1, Vector::Zero(2), ex({1, 1}, 2));
  CHECK(g0[0] == doctest::Approx(-4.0));
  CHECK(g0[1] == doctest::Approx(-4.0));

  const Vector g1 = ridge_grad(0.1, vec({1, 1}), ex({1, 1}, 2));
  CHECK(g1[0] == doctest::Approx(0.2));
  CHECK(g1[1] == doctest::Approx(0.2));
  CHECK_THROWS_AS(ridge_grad(0.1, vec({1}), ex({1, 1}, 2)), ValidationError);
}

TEST_CASE("ridge gradient matches finite differences at 100 random pairs") {
  const RidgeLoss loss(0.1);
  const CounterRng rng(7, 1);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Vector theta = test_util::random_vector(rng, i, 5, -2.0, 2.0);
    const Vector x = test_util::random_vector(rng, i + 1000, 5, -2.0, 2.0);
    const Example e(x, rng.uniform(i, 7, -3.0, 3.0));
    const Vector g = loss.grad_theta(theta, e);
    const Vector fd = test_util::fd_gradient(
        [&](const Vector& th) { return loss.value(th, e); }, theta);
    CHECK((g - fd).norm() <= 1e-5 * (1.0 + g.norm()));
  }
}

TEST_CASE("ridge declared constants and empirical curvature") {
  const double lambda = 0.1;
  const RidgeLoss loss(lambda, 28.0 / 3.0);
  const LossConstants c = loss.constants();
  CHECK(c.mu == doctest::Approx(2.0 * lambda));
  CHECK(c.L_smooth == doctest::Approx(2.0 * 28.0 / 3.0 + 2.0 * lambda));
  CHECK(c.l_floor == 0.0);

  // Curvature along random unit directions lies in [2*lambda,
  // 2*max||x||^2 + 2*lambda].
  const CounterRng rng(11, 2);
  double max_xsq = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Vector x = test_util::random_vector(rng, i, 4, 0.0, 2.0);
    max_xsq = std::max(max_xsq, x.squaredNorm());
    const Example e(x, rng.uniform(i, 50, -2.0, 2.0));
    const Vector theta = test_util::random_vector(rng, i + 500, 4, -1.0, 1.0);
    Vector dir = test_util::random_vector(rng, i + 900, 4, -1.0, 1.0);
    dir /= dir.norm();
    const double curv = test_util::fd_second_directional(
        [&](const Vector& th) { return loss.value(th, e); }, theta, dir);
    CHECK(curv >= 2.0 * lambda - 1e-6);
    CHECK(curv <= 2.0 * x.squaredNorm() + 2.0 * lambda + 1e-6);
  }
  CHECK(max_xsq > 0.0);
}

TEST_CASE("surrogate value subtracts the fictitious target") {
  const RidgeLoss inner(0.1);
  const SmoothedSurrogate s(inner, 1.0);
  const Example e = ex({1, 1}, 2);
  const Vector theta = Vector::Zero(2);
  CHECK(surrogate_value(s, theta, AugmentedExample(e, 0.0)) ==
        doctest::Approx(4.0));
  CHECK(surrogate_value(s, theta, AugmentedExample(e, 1.5)) ==
        doctest::Approx(2.5));
  // w has no theta dependence.
  const Vector g = surrogate_grad(s, theta, AugmentedExample(e, 1.5));
  CHECK((g - inner.grad_theta(theta, e)).norm() == 0.0);
}

TEST_CASE("surrogate Monte Carlo mean recovers the inner value") {
  const RidgeLoss inner(0.1);
  const double sigma = 0.7;
  const SmoothedSurrogate s(inner, sigma);
  const Example e = ex({1, 1}, 2);
  const Vector theta = Vector::Zero(2);
  const double inner_value = inner.value(theta, e);

  const CounterRng rng(5, 3);
  const std::size_t n = 100000;
  KahanSum sum, sum_sq;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = sigma * rng.normal(i, 0);
    const double v = surrogate_value(s, theta, AugmentedExample(e, w));
    sum.add(v);
    sum_sq.add(v * v);
  }
  const double mean = sum.value() / n;
  const double var = sum_sq.value() / n - mean * mean;
  const double se = std::sqrt(var / n);
  CHECK(std::abs(mean - inner_value) <= 3.0 * se);
}

TEST_CASE("smoothness constant L'") {
  LossConstants c;
  SUBCASE("zero numerator") {
    c.L_smooth = 0.0;
    c.G_lip = 0.0;
    CHECK(smoothness_constant_Lprime(c, 0.3, ConfidenceLevel(0.7)) == 0.0);
  }
  SUBCASE("direct evaluation") {
    c.L_smooth = 2.0;
    c.G_lip = 1.0;
    CHECK(smoothness_constant_Lprime(c, 1.0, ConfidenceLevel(0.5)) ==
          doctest::Approx(4.7979).epsilon(1e-4));
  }
  SUBCASE("reduces to L/alpha") {
    c.L_smooth = 1.0;
    c.G_lip = 0.0;
    CHECK(smoothness_constant_Lprime(c, 1.0, ConfidenceLevel(1.0)) ==
          doctest::Approx(1.0));
  }
}

TEST_CASE("r_sigma values") {
  CHECK(r_sigma(1.0, 0.0) == doctest::Approx(1.0 / kSqrt2Pi).epsilon(1e-12));
  CHECK(std::abs(r_sigma(1.0, 10.0) - 10.0) <= 1e-8);

  // Quadrature oracle for E{(z - w)_+}, w ~ N(0, sigma^2).
  const double sigma = 2.0, z = -0.5;
  // (z - w)_+ is nonzero only for w < z; integrate up to the kink.
  const double quad = test_util::gauss_legendre(
      [&](double w) { return (z - w) * norm_pdf(w / sigma) / sigma; },
      -12.0 * sigma, z, 200);
  CHECK(r_sigma(sigma, z) == doctest::Approx(quad).epsilon(1e-6));
}

TEST_CASE("r_sigma sandwich, monotonicity, convexity on a grid") {
  for (double sigma : {0.5, 1.0, 3.0}) {
    const int n = 1000;
    std::vector<double> vals(n);
    double prev_z = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = -10.0 * sigma + 20.0 * sigma * i / (n - 1);
      const double r = r_sigma(sigma, z);
      const double plus = z > 0.0 ? z : 0.0;
      CHECK(r >= plus);
      CHECK(r <= sigma / kSqrt2Pi + plus);
      vals[static_cast<std::size_t>(i)] = r;
      prev_z = z;
    }
    (void)prev_z;
    for (int i = 1; i < n; ++i)
      CHECK(vals[i] >= vals[i - 1] - 1e-12);  // nondecreasing
    for (int i = 1; i + 1 < n; ++i)
      CHECK(vals[i + 1] - 2.0 * vals[i] + vals[i - 1] >= -1e-12);  // convex
  }
}

TEST_CASE("norm_cdf sanity") {
  CHECK(norm_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(norm_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
  CHECK(norm_cdf(-8.0) == doctest::Approx(6.22096e-16).epsilon(1e-4));
}
