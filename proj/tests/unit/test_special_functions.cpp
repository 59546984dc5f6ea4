#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include <numbers>

#include "bsvd/special.hpp"
#include "oracles.hpp"

using namespace bsvd;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

double bessel_power_series(double nu, double x, int terms) {
  double s = 0.0;
  for (int k = 0; k < terms; ++k)
    s += std::exp((2.0 * k + nu) * std::log(x / 2.0) - std::lgamma(k + 1.0) - std::lgamma(k + nu + 1.0));
  return s;
}

/// Monte-Carlo E[exp(u'Av)] with independent uniform unit vectors.
oracle::MeanSe mc_bilinear(const Matrix& a, long draws, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> z;
  Vector u(a.rows()), v(a.cols());
  double s = 0.0, s2 = 0.0;
  for (long t = 0; t < draws; ++t) {
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = z(g);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = z(g);
    const double x = std::exp(u.dot(a * v) / (u.norm() * v.norm()));
    s += x;
    s2 += x * x;
  }
  const double n = static_cast<double>(draws);
  const double mean = s / n;
  return {mean, std::sqrt((s2 / n - mean * mean) / n)};
}

}  // namespace

TEST_CASE("log_bessel_i closed forms and oracles") {
  CHECK(log_bessel_i(0.0, 0.0) == 0.0);
  CHECK(rel_err(std::exp(log_bessel_i(0.5, 1.0)), std::sqrt(2.0 / std::numbers::pi) * std::sinh(1.0)) <
        1e-12);
  CHECK(rel_err(std::exp(log_bessel_i(1.0, 2.0)), bessel_power_series(1.0, 2.0, 50)) < 1e-10);
  CHECK(log_bessel_i(1.0, 0.0) == -std::numeric_limits<double>::infinity());

  for (double nu : {0.0, 0.5, 1.0, 2.5, 7.0, 30.0}) {
    for (double x : {1e-3, 0.3, 1.0, 4.0, 17.0, 49.0}) {
      CAPTURE(nu);
      CAPTURE(x);
      CHECK(rel_err(std::exp(log_bessel_i(nu, x)), boost::math::cyl_bessel_i(nu, x)) < 1e-10);
    }
  }
}

TEST_CASE("log_bessel_i stays finite for large arguments") {
  for (double x : {700.0, 1e4, 1e6, 1e9}) {
    const double v = log_bessel_i(1.5, x);
    CHECK(std::isfinite(v));
    // log I_nu(x) ~ x - log(2 pi x)/2
    CHECK(std::abs(v - (x - 0.5 * std::log(2.0 * std::numbers::pi * x))) < 2.0 / x + 1e-9 * x);
  }
  // matches boost where boost is still finite
  CHECK(std::abs(log_bessel_i(3.0, 600.0) - std::log(boost::math::cyl_bessel_i(3.0, 600.0))) < 1e-10);
}

TEST_CASE("log_bessel_i rejects negative arguments") {
  CHECK_THROWS_AS(log_bessel_i(-1.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(log_bessel_i(1.0, -1.0), ArgumentError);
}

TEST_CASE("log_vmf_const") {
  const double pi = std::numbers::pi;
  CHECK(rel_err(std::exp(log_vmf_const(3, 0.0)), 1.0 / (4.0 * pi)) < 1e-14);
  CHECK(rel_err(std::exp(log_vmf_const(3, 2.0)), 2.0 / (4.0 * pi * std::sinh(2.0))) < 1e-12);
  CHECK(std::abs(std::exp(log_vmf_const(4, 1e-9)) - std::exp(log_vmf_const(4, 0.0))) < 1e-8);
  CHECK_THROWS_AS(log_vmf_const(1, 1.0), ArgumentError);
  CHECK_THROWS_AS(log_vmf_const(3, -1.0), ArgumentError);

  // The density integrates to one on the circle.
  const double kappa = 2.7;
  const double c = std::exp(log_vmf_const(2, kappa));
  auto f = [&](double t) { return c * std::exp(kappa * std::cos(t)); };
  const double total = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 2.0 * pi);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("normal_even_moments") {
  const auto std_moments = normal_even_moments(0.0, 1.0, 3);
  CHECK(std_moments == std::vector<double>{1.0, 1.0, 3.0, 15.0});

  const auto point = normal_even_moments(1.7, 0.0, 5);
  for (int l = 0; l <= 5; ++l) CHECK(rel_err(point[l], std::pow(1.7, 2 * l)) < 1e-14);

  const auto m = normal_even_moments(1.0, 2.0, 4);
  for (int l = 0; l <= 4; ++l) {
    auto integrand = [&](double x) {
      return std::pow(x, 2 * l) * std::exp(-0.5 * (x - 1.0) * (x - 1.0) / 2.0) /
             std::sqrt(2.0 * std::numbers::pi * 2.0);
    };
    const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        integrand, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 15,
        1e-13);
    CAPTURE(l);
    CHECK(rel_err(m[l], q) < 1e-8);
  }

  // (2l-1)!! variance^l
  const double var = 0.7;
  const auto z = normal_even_moments(0.0, var, 10);
  double dfact = 1.0;
  for (int l = 1; l <= 10; ++l) {
    dfact *= 2.0 * l - 1.0;
    CHECK(rel_err(z[l], dfact * std::pow(var, l)) < 1e-13);
  }
}

TEST_CASE("log_normal_even_moments agrees with the direct recursion and survives overflow") {
  const auto direct = normal_even_moments(0.4, 1.3, 20);
  const auto logged = log_normal_even_moments(0.4, 1.3, 20);
  for (int l = 0; l <= 20; ++l) CHECK(rel_err(std::exp(logged[l]), direct[l]) < 1e-12);
  const auto big = log_normal_even_moments(2.0, 1.0, 3000);
  for (double v : big) CHECK(std::isfinite(v));
}

TEST_CASE("dirichlet_avg_moments") {
  SUBCASE("constant lambda") {
    const auto m = dirichlet_avg_moments(Vector::Constant(4, 1.5), Vector::Constant(4, 0.5), 8);
    for (int l = 0; l <= 8; ++l) CHECK(rel_err(m[l], std::pow(1.5, l)) < 1e-13);
  }
  SUBCASE("first moment is the Dirichlet mean") {
    Vector lambda(3), alpha(3);
    lambda << 0.2, 3.0, 1.1;
    alpha << 0.5, 2.0, 1.5;
    const auto m = dirichlet_avg_moments(lambda, alpha, 1);
    CHECK(rel_err(m[1], lambda.dot(alpha) / alpha.sum()) < 1e-14);
  }
  SUBCASE("Beta(1/2,1/2) moments") {
    Vector lambda(2), alpha(2);
    lambda << 0.0, 1.0;
    alpha << 0.5, 0.5;
    const auto m = dirichlet_avg_moments(lambda, alpha, 10);
    CHECK(rel_err(m[2], 3.0 / 8.0) < 1e-12);
    double expected = 1.0;
    for (int l = 1; l <= 10; ++l) {
      expected *= (0.5 + l - 1) / (1.0 + l - 1);
      CHECK(rel_err(m[l], expected) < 1e-10);
    }
  }
  SUBCASE("bounded by extreme lambda powers") {
    std::mt19937_64 g(21);
    std::uniform_real_distribution<double> unif(0.0, 3.0);
    Vector lambda(6);
    for (Eigen::Index i = 0; i < 6; ++i) lambda[i] = unif(g);
    const auto m = dirichlet_avg_moments(lambda, Vector::Constant(6, 0.5), 40);
    for (int l = 0; l <= 40; ++l) {
      CHECK(m[l] >= std::pow(lambda.minCoeff(), l) * (1 - 1e-12));
      CHECK(m[l] <= std::pow(lambda.maxCoeff(), l) * (1 + 1e-12));
    }
  }
  SUBCASE("argument errors") {
    CHECK_THROWS_AS(dirichlet_avg_moments(Vector::Ones(2), Vector::Zero(2), 3), ArgumentError);
    CHECK_THROWS_AS(dirichlet_avg_moments(Vector::Ones(2), Vector::Constant(2, -1.0), 3), ArgumentError);
    CHECK_THROWS_AS(dirichlet_avg_moments(-Vector::Ones(2), Vector::Ones(2), 3), ArgumentError);
    CHECK_THROWS_AS(dirichlet_avg_moments(Vector::Ones(2), Vector::Ones(3), 3), ArgumentError);
  }
}

TEST_CASE("dirichlet_avg_moments against Dirichlet Monte Carlo") {
  std::mt19937_64 g(22);
  Vector lambda(5);
  lambda << 0.3, 1.9, 0.8, 2.6, 1.2;
  const auto m = dirichlet_avg_moments(lambda, Vector::Constant(5, 0.5), 4);
  std::gamma_distribution<double> gam(0.5, 1.0);
  std::vector<std::vector<double>> draws(5);
  for (long t = 0; t < 200000; ++t) {
    double s = 0.0, dot = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double x = gam(g);
      s += x;
      dot += lambda[i] * x;
    }
    const double avg = dot / s;
    for (int l = 1; l <= 4; ++l) draws[l].push_back(std::pow(avg, l));
  }
  for (int l = 1; l <= 4; ++l) {
    const auto est = oracle::mean_se(draws[l]);
    CAPTURE(l);
    CHECK(std::abs(m[l] - est.mean) < 4.0 * est.se);
  }
}

TEST_CASE("series_tail_bounds") {
  SUBCASE("degenerate sandwich") {
    const auto b = series_tail_bounds(2.0, 2.0, 3, 6);
    CHECK(b.low == b.high);
  }
  SUBCASE("lambda_min = 0") {
    const auto b = series_tail_bounds(0.0, 3.0, 2, 5);
    CHECK(b.low == 0.0);
    CHECK(b.high > 0.0);
  }
  SUBCASE("brute-force tail is enclosed") {
    // lambda fixed at 2 makes E[(lambda'q)^l] = 2^l
    double tail = 0.0;
    for (int l = 4; l < 504; ++l)
      tail += std::exp(l * std::log(2.0) + std::lgamma(3.0) - std::lgamma(3.0 + l) - std::lgamma(1.0 + l) -
                       l * std::log(4.0));
    const auto b = series_tail_bounds(1.0, 4.0, 3, 6);
    CHECK(b.low <= tail);
    CHECK(tail <= b.high);
    const auto exact = series_tail_bounds(2.0, 2.0, 3, 6);
    CHECK(rel_err(exact.low, tail) < 1e-10);
  }
  SUBCASE("argument errors") {
    CHECK_THROWS_AS(series_tail_bounds(2.0, 1.0, 3, 6), ArgumentError);
    CHECK_THROWS_AS(series_tail_bounds(-1.0, 1.0, 3, 6), ArgumentError);
  }
}

TEST_CASE("bilinear_series_coeffs") {
  std::mt19937_64 g(23);
  SUBCASE("zero lambda") {
    const auto c = bilinear_series_coeffs(Vector::Zero(3), 5, 3, 1.0, 0.0, 1.0);
    CHECK(c.log_a.at(0) == 0.0);
    CHECK(c.log_weight_sum() == doctest::Approx(c.log_b[0]));
  }
  SUBCASE("square case has no theta factor") {
    Vector lambda(3);
    lambda << 2.0, 1.0, 0.5;
    const auto c = bilinear_series_coeffs(lambda, 3, 3, 1.0, 0.0, 1.0);
    const Vector lt = lambda / lambda.sum();
    const auto dm = dirichlet_avg_moments(lt, Vector::Constant(3, 0.5), 6);
    for (int l = 0; l <= 6; ++l) {
      const double expected = std::log(dm[l]) + std::lgamma(1.5) - std::lgamma(1.5 + l) -
                              std::lgamma(1.0 + l) - l * std::log(4.0);
      CHECK(std::abs(c.log_a[l] - expected) < 1e-10);
    }
  }
  SUBCASE("invariants") {
    Vector lambda(3);
    lambda << 9.0, 4.0, 0.25;
    const auto c = bilinear_series_coeffs(lambda, 6, 3, 2.0, 1.5, 0.3);
    CHECK(c.log_a[0] == 0.0);
    CHECK(c.tail_low <= c.tail_high);
    CHECK(c.tail_high < 1e-10);
    for (int l = 0; l <= c.order; ++l) {
      CHECK(std::isfinite(c.log_a[l]));
      CHECK(std::isfinite(c.log_b[l]));
    }
    // terms decrease beyond the chosen order
    CHECK(c.log_weight(c.order) < c.log_weight(c.order - 1));
  }
  SUBCASE("b_l against quadrature") {
    const double phi = 1.3, mu = 0.8, psi = 0.6;
    const auto c = bilinear_series_coeffs(Vector::Constant(2, 1.0), 4, 2, phi, mu, psi);
    for (int l = 0; l <= 3; ++l) {
      // b_l = phi^{2l} int d^{2l} exp(-phi d^2 / 2) normal(d; mu, 1/psi) dd
      auto f = [&](double d) {
        return std::pow(phi, 2 * l) * std::pow(d, 2 * l) * std::exp(-0.5 * phi * d * d) *
               std::sqrt(psi / (2.0 * std::numbers::pi)) * std::exp(-0.5 * psi * (d - mu) * (d - mu));
      };
      const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          f, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 15, 1e-13);
      CAPTURE(l);
      CHECK(rel_err(std::exp(c.log_b[l]), q) < 1e-8);
    }
  }
  SUBCASE("a-series matches Monte Carlo") {
    const Matrix a = oracle::gaussian(g, 6, 3);
    const Vector lambda = gram_eigenvalues(a);
    const auto c = bilinear_series_coeffs(lambda, 6, 3, 1.0, 0.0, 1.0);
    const auto mc = mc_bilinear(a, 1000000, 24);
    CHECK(std::abs(std::exp(c.log_a_sum()) - mc.mean) < 3.0 * mc.se);
  }
  SUBCASE("argument errors") {
    CHECK_THROWS_AS(bilinear_series_coeffs(Vector::Ones(3), 2, 3, 1.0, 0.0, 1.0), ArgumentError);
    CHECK_THROWS_AS(bilinear_series_coeffs(Vector::Ones(3), 4, 3, 0.0, 0.0, 1.0), ArgumentError);
    CHECK_THROWS_AS(bilinear_series_coeffs(Vector::Ones(3), 4, 3, 1.0, 0.0, -1.0), ArgumentError);
  }
  SUBCASE("order cap becomes a truncation error") {
    SeriesOptions opts;
    opts.max_order = 8;
    try {
      bilinear_series_coeffs(Vector::Constant(3, 400.0), 5, 3, 1.0, 0.0, 1.0, opts);
      FAIL("expected a truncation error");
    } catch (const TruncationError& e) {
      CHECK(e.order() == 8);
      CHECK(e.achieved_bound() > opts.rel_tol);
    }
  }
}

TEST_CASE("bilinear_expectation") {
  std::mt19937_64 g(25);
  CHECK(bilinear_expectation(Matrix::Zero(4, 2)).value() == 1.0);

  for (int t = 0; t < 5; ++t) {
    const Matrix a = oracle::gaussian(g, 4 + t, 2 + t % 3);
    const auto e = bilinear_expectation(a);
    CHECK(e.lower() >= 1.0);
    CHECK(e.lower() <= e.upper());
    CHECK((e.upper() - e.lower()) / e.value() < 1e-10);
  }

  Matrix a = oracle::gaussian(g, 5, 3);
  a *= 4.0 / a.norm();
  const auto e = bilinear_expectation(a);
  const auto mc = mc_bilinear(a, 1000000, 26);
  CHECK(std::abs(e.value() - mc.mean) < 3.0 * mc.se);

  // wide matrices are handled by symmetry
  CHECK(bilinear_expectation(Matrix(a.transpose())).value() == doctest::Approx(e.value()).epsilon(1e-12));
}

TEST_CASE("log-space series survive large norms") {
  std::mt19937_64 g(27);
  Matrix a = oracle::gaussian(g, 200, 200);
  a *= 1000.0 / a.norm();
  const auto e = bilinear_expectation(a, 1e-10, 5000);
  CHECK(std::isfinite(e.log_lower));
  CHECK(std::isfinite(e.log_upper));
  const auto c = bilinear_series_coeffs(gram_eigenvalues(a), 200, 200, 1e-3, 0.0, 1.0);
  CHECK(std::isfinite(c.log_weight_sum()));
}

TEST_CASE("log_add and log_sum_exp") {
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(log_add(ninf, 2.0) == 2.0);
  CHECK(log_add(1000.0, 1000.0) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(log_sum_exp({}) == ninf);
  CHECK(log_sum_exp({-1000.0, -1000.0, -1000.0}) == doctest::Approx(-1000.0 + std::log(3.0)));
}
