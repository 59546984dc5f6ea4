#include "bsvd/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace bsvd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog4 = std::log(4.0);

// log I_nu(x) for nu > -1. Terms of the power series are accumulated outward
// from the largest one; all terms are positive.
double log_bessel_series(double nu, double x) {
  if (x == 0.0) return nu == 0.0 ? 0.0 : (nu > 0.0 ? kNegInf : std::numeric_limits<double>::infinity());

  if (x > 1e4 && x > 50.0 * (nu * nu + 1.0)) {
    // Hankel expansion; the terms shrink geometrically in this regime.
    const double mu4 = 4.0 * nu * nu;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 30; ++k) {
      const double odd = 2.0 * k - 1.0;
      term *= -(mu4 - odd * odd) / (8.0 * k * x);
      sum += term;
      if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    }
    return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
  }

  const double half = 0.5 * x;
  const double q = half * half;
  const double peak = std::floor(0.5 * (-(nu + 2.0) + std::sqrt(nu * nu + x * x)));
  const double k0 = std::max(0.0, peak);
  const double log_t0 =
      (2.0 * k0 + nu) * std::log(half) - std::lgamma(k0 + 1.0) - std::lgamma(k0 + nu + 1.0);

  double sum = 1.0;
  double t = 1.0;
  for (double k = k0;; k += 1.0) {
    t *= q / ((k + 1.0) * (k + nu + 1.0));
    sum += t;
    if (t < 1e-17 * sum) break;
  }
  t = 1.0;
  for (double k = k0; k > 0.0; k -= 1.0) {
    t *= k * (k + nu) / q;
    sum += t;
    if (t < 1e-17 * sum) break;
  }
  return log_t0 + std::log(sum);
}

// log of t_l(lambda) = lambda^l Gamma(m/2) / (Gamma(m/2+l) Gamma(1+l) 4^l).
double log_a_weight(double log_lambda, int l, double half_m) {
  return l * log_lambda + std::lgamma(half_m) - std::lgamma(half_m + l) - std::lgamma(l + 1.0) -
         l * kLog4;
}

// log sum_{l>r} t_l(lambda).
double log_tail(double lambda, int r, int m) {
  if (lambda <= 0.0) return kNegInf;
  const double half_m = 0.5 * m;
  const double log_lambda = std::log(lambda);
  const double s = std::sqrt(lambda);
  const double nu = half_m - 1.0;
  // Closed form of the full sum: Gamma(m/2) (2/s)^{m/2-1} I_{m/2-1}(s).
  const double log_full =
      std::lgamma(half_m) + nu * (std::log(2.0) - std::log(s)) + log_bessel_series(nu, s);

  std::vector<double> head(static_cast<std::size_t>(r) + 1);
  for (int l = 0; l <= r; ++l) head[l] = log_a_weight(log_lambda, l, half_m);
  const double log_head = log_sum_exp(head);

  const double diff = log_head - log_full;
  if (diff < std::log1p(-1e-6)) return log_full + std::log1p(-std::exp(diff));

  // The head already holds almost all the mass: subtracting would cancel, so
  // sum the (decreasing) tail terms directly.
  double log_t = head.back();
  double lead = kNegInf;
  double rel = 0.0;
  for (int l = r;; ++l) {
    log_t += log_lambda - kLog4 - std::log(l + 1.0) - std::log(half_m + l);
    if (lead == kNegInf) {
      lead = log_t;
      rel = 1.0;
    } else {
      const double t = std::exp(log_t - lead);
      rel += t;
      if (t < 1e-18 * rel) break;
    }
    if (l > r + 100000) break;
  }
  return lead + std::log(rel);
}

struct ASeriesEval {
  std::vector<double> log_a;      // log a_l, using lambda normalized to unit sum
  std::vector<double> log_terms;  // log |E|^{2l} a_l
  double log_partial = 0.0;
  TailBounds log_tail;
};

ASeriesEval eval_a_series(const Vector& lambda, double lambda_sum, int m, int order) {
  const double lmax = lambda.maxCoeff();
  const double lmin = lambda.minCoeff();
  const Vector scaled = lambda / lmax;
  const Vector alpha = Vector::Constant(lambda.size(), 0.5);
  const std::vector<double> log_moments = log_dirichlet_avg_moments(scaled, alpha, order);

  const double log_rel = std::log(lmax) - std::log(lambda_sum);
  const double log_sum = std::log(lambda_sum);
  const double half_m = 0.5 * m;

  ASeriesEval out;
  out.log_a.resize(order + 1);
  out.log_terms.resize(order + 1);
  for (int l = 0; l <= order; ++l) {
    out.log_a[l] = log_moments[l] + l * log_rel + std::lgamma(half_m) - std::lgamma(half_m + l) -
                   std::lgamma(l + 1.0) - l * kLog4;
    out.log_terms[l] = l * log_sum + out.log_a[l];
  }
  out.log_partial = log_sum_exp(out.log_terms);
  out.log_tail = log_series_tail_bounds(lmin, lmax, order, m);
  return out;
}

int initial_order(double lambda_max, int cap) {
  const int guess = static_cast<int>(std::ceil(std::sqrt(lambda_max))) + 16;
  return std::clamp(guess, 2, std::max(cap, 2));
}

}  // namespace

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double log_sum_exp(const std::vector<double>& x) {
  if (x.empty()) return kNegInf;
  const double hi = *std::max_element(x.begin(), x.end());
  if (hi == kNegInf) return kNegInf;
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : x) s += std::exp(v - hi);
  return hi + std::log(s);
}

double log_bessel_i(double order, double x) {
  if (!(order >= 0.0) || !(x >= 0.0))
    throw ArgumentError("log_bessel_i requires order >= 0 and x >= 0 (got order " +
                        std::to_string(order) + ", x " + std::to_string(x) + ")");
  return log_bessel_series(order, x);
}

double log_vmf_const(int dim, double kappa) {
  if (dim < 2) throw ArgumentError("log_vmf_const requires dimension >= 2, got " + std::to_string(dim));
  if (!(kappa >= 0.0)) throw ArgumentError("log_vmf_const requires kappa >= 0");
  const double half_p = 0.5 * dim;
  if (kappa == 0.0) return std::lgamma(half_p) - std::log(2.0) - half_p * std::log(std::numbers::pi);
  return -half_p * std::log(2.0 * std::numbers::pi) + (half_p - 1.0) * std::log(kappa) -
         log_bessel_series(half_p - 1.0, kappa);
}

std::vector<double> normal_even_moments(double mean, double variance, int max_order) {
  if (!(variance >= 0.0)) throw ArgumentError("normal_even_moments requires variance >= 0");
  if (max_order < 0) throw ArgumentError("normal_even_moments requires max_order >= 0");
  std::vector<double> out(static_cast<std::size_t>(max_order) + 1);
  out[0] = 1.0;
  double prev = 1.0;  // M_{k-2}
  double cur = mean;  // M_{k-1}
  for (int k = 2; k <= 2 * max_order; ++k) {
    const double next = mean * cur + (k - 1) * variance * prev;
    prev = cur;
    cur = next;
    if (k % 2 == 0) out[k / 2] = cur;
  }
  return out;
}

std::vector<double> log_normal_even_moments(double mean, double variance, int max_order) {
  if (!(variance >= 0.0)) throw ArgumentError("log_normal_even_moments requires variance >= 0");
  if (max_order < 0) throw ArgumentError("log_normal_even_moments requires max_order >= 0");
  std::vector<double> out(static_cast<std::size_t>(max_order) + 1, kNegInf);
  out[0] = 0.0;
  // The recursion is linear and homogeneous and never mixes signs, so the
  // pair (M_{k-2}, M_{k-1}) can be rescaled jointly.
  double prev = 1.0;
  double cur = mean;
  double log_scale = 0.0;
  for (int k = 2; k <= 2 * max_order; ++k) {
    const double next = mean * cur + (k - 1) * variance * prev;
    prev = cur;
    cur = next;
    if (k % 2 == 0) out[k / 2] = cur > 0.0 ? std::log(cur) + log_scale : kNegInf;
    const double mag = std::max(std::abs(prev), std::abs(cur));
    if (mag == 0.0) break;
    if (mag > 1e150 || mag < 1e-150) {
      prev /= mag;
      cur /= mag;
      log_scale += std::log(mag);
    }
  }
  return out;
}

std::vector<double> log_dirichlet_avg_moments(const Vector& lambda, const Vector& alpha,
                                              int max_order) {
  const Eigen::Index n = lambda.size();
  if (n < 1) throw ArgumentError("dirichlet_avg_moments requires at least one component");
  if (alpha.size() != n)
    throw ArgumentError("dirichlet_avg_moments: lambda has " + std::to_string(n) +
                        " entries, alpha has " + std::to_string(alpha.size()));
  if (max_order < 0) throw ArgumentError("dirichlet_avg_moments requires max_order >= 0");
  if (!lambda.allFinite() || (lambda.array() < 0.0).any())
    throw ArgumentError("dirichlet_avg_moments requires finite lambda >= 0");
  if (!alpha.allFinite() || (alpha.array() <= 0.0).any())
    throw ArgumentError("dirichlet_avg_moments requires alpha > 0");

  std::vector<double> out(static_cast<std::size_t>(max_order) + 1, kNegInf);
  out[0] = 0.0;
  const double lmax = lambda.maxCoeff();
  if (lmax == 0.0 || max_order == 0) return out;

  using Real = long double;
  const Real total_alpha = alpha.sum();
  std::vector<Real> ratio(n);
  for (Eigen::Index i = 0; i < n; ++i) ratio[i] = static_cast<Real>(lambda[i] / lmax);

  // power_sums[j] = sum_i alpha_i ratio_i^j
  std::vector<Real> power_sums(static_cast<std::size_t>(max_order) + 1, 0.0L);
  std::vector<Real> powers(ratio);
  for (int j = 1; j <= max_order; ++j) {
    Real s = 0.0L;
    for (Eigen::Index i = 0; i < n; ++i) {
      s += static_cast<Real>(alpha[i]) * powers[i];
      powers[i] *= ratio[i];
    }
    power_sums[j] = s;
  }

  // Coefficients of prod_i (1 - t ratio_i)^{-alpha_i}: differentiating the log
  // gives (k+1) c_{k+1} = sum_{l<=k} c_l power_sums[k+1-l].
  std::vector<Real> c(static_cast<std::size_t>(max_order) + 1, 0.0L);
  c[0] = 1.0L;
  for (int k = 0; k < max_order; ++k) {
    Real acc = 0.0L;
    for (int l = 0; l <= k; ++l) acc += c[l] * power_sums[k + 1 - l];
    c[k + 1] = acc / static_cast<Real>(k + 1);
    if (!std::isfinite(static_cast<double>(std::log(c[k + 1]))))
      throw NumericalError("dirichlet_avg_moments: coefficient overflow at order " +
                           std::to_string(k + 1));
  }

  const Real lg_total = std::lgamma(total_alpha);
  for (int l = 1; l <= max_order; ++l) {
    const Real log_moment = std::log(c[l]) + lg_total + std::lgamma(static_cast<Real>(l) + 1.0L) -
                            std::lgamma(total_alpha + static_cast<Real>(l));
    out[l] = static_cast<double>(log_moment) + l * std::log(lmax);
  }
  return out;
}

std::vector<double> dirichlet_avg_moments(const Vector& lambda, const Vector& alpha,
                                          int max_order) {
  std::vector<double> out = log_dirichlet_avg_moments(lambda, alpha, max_order);
  for (double& v : out) v = std::exp(v);
  return out;
}

double SeriesCoefficients::log_weight(int l) const {
  const double scale = l == 0 ? 0.0 : l * log_norm_sq;
  return scale + log_a[l] + log_b[l];
}

double SeriesCoefficients::log_weight_sum() const {
  std::vector<double> w(static_cast<std::size_t>(order) + 1);
  for (int l = 0; l <= order; ++l) w[l] = log_weight(l);
  return log_sum_exp(w);
}

double SeriesCoefficients::log_a_sum() const {
  std::vector<double> w(static_cast<std::size_t>(order) + 1);
  for (int l = 0; l <= order; ++l) w[l] = (l == 0 ? 0.0 : l * log_norm_sq) + log_a[l];
  return log_sum_exp(w);
}

TailBounds log_series_tail_bounds(double lambda_min, double lambda_max, int r, int m) {
  if (!(lambda_min >= 0.0) || !(lambda_max >= 0.0))
    throw ArgumentError("series_tail_bounds requires nonnegative lambda");
  if (lambda_min > lambda_max)
    throw ArgumentError("series_tail_bounds: lambda_min " + std::to_string(lambda_min) +
                        " exceeds lambda_max " + std::to_string(lambda_max));
  if (r < 0) throw ArgumentError("series_tail_bounds requires r >= 0");
  if (m < 1) throw ArgumentError("series_tail_bounds requires m >= 1");
  TailBounds out;
  out.high = log_tail(lambda_max, r, m);
  out.low = lambda_min == lambda_max ? out.high : log_tail(lambda_min, r, m);
  return out;
}

TailBounds series_tail_bounds(double lambda_min, double lambda_max, int r, int m) {
  const TailBounds lb = log_series_tail_bounds(lambda_min, lambda_max, r, m);
  return {std::exp(lb.low), std::exp(lb.high)};
}

SeriesCoefficients bilinear_series_coeffs(const Vector& lambda, int mtilde, int ntilde, double phi,
                                          double mu, double psi, const SeriesOptions& opts) {
  if (ntilde < 1 || mtilde < ntilde)
    throw ArgumentError("bilinear_series_coeffs requires mtilde >= ntilde >= 1 (got " +
                        std::to_string(mtilde) + ", " + std::to_string(ntilde) + ")");
  if (lambda.size() != ntilde)
    throw ArgumentError("bilinear_series_coeffs: expected " + std::to_string(ntilde) +
                        " squared singular values, got " + std::to_string(lambda.size()));
  if (!lambda.allFinite() || (lambda.array() < 0.0).any())
    throw ArgumentError("bilinear_series_coeffs requires finite lambda >= 0");
  if (!(phi > 0.0) || !(psi > 0.0) || !std::isfinite(mu))
    throw ArgumentError("bilinear_series_coeffs requires phi > 0, psi > 0 and finite mu");
  if (!(opts.rel_tol > 0.0)) throw ArgumentError("bilinear_series_coeffs requires rel_tol > 0");

  const double log_b_const =
      0.5 * std::log(psi / (phi + psi)) - 0.5 * mu * mu * psi * phi / (phi + psi);
  const double mean_d = mu * psi / (phi + psi);
  const double var_d = 1.0 / (phi + psi);
  const double log_phi = std::log(phi);

  SeriesCoefficients out;
  const double lambda_sum = lambda.sum();
  if (lambda_sum <= 0.0) {
    out.order = 0;
    out.log_a = {0.0};
    out.log_b = {log_b_const};
    out.log_norm_sq = kNegInf;
    return out;
  }
  out.log_norm_sq = std::log(lambda_sum);

  const int cap = std::max(opts.max_order, 2);
  // The weighted terms peak near l = lambda_max phi^2 E[d^2] / 2 and fall off
  // like a Gaussian of width sqrt(l) beyond it.
  const double peak = 0.5 * lambda.maxCoeff() * phi * phi * (var_d + mean_d * mean_d);
  const double peak_order = peak + 8.0 * std::sqrt(peak) + 16.0;
  int order = initial_order(lambda.maxCoeff(), cap);
  if (peak_order > order) order = static_cast<int>(std::min<double>(peak_order, cap));
  for (;;) {
    const ASeriesEval a = eval_a_series(lambda, lambda_sum, mtilde, order);
    const std::vector<double> log_dm = log_normal_even_moments(mean_d, var_d, order);

    std::vector<double> log_b(order + 1);
    std::vector<double> w(order + 1);
    for (int l = 0; l <= order; ++l) {
      log_b[l] = 2.0 * l * log_phi + log_b_const + log_dm[l];
      w[l] = a.log_terms[l] + log_b[l];
    }
    const double log_w = log_sum_exp(w);

    const double a_rel_high = std::exp(a.log_tail.high - a.log_partial);
    // Weighted series: once consecutive ratios are below one and shrinking,
    // the remainder is dominated by a geometric series.
    const double last_ratio = std::exp(w[order] - w[order - 1]);
    const double prev_ratio = std::exp(w[order - 1] - w[order - 2]);
    double w_rel = std::numeric_limits<double>::infinity();
    if (last_ratio < 1.0 && last_ratio <= prev_ratio)
      w_rel = std::exp(w[order] - log_w) * last_ratio / (1.0 - last_ratio);

    if (a_rel_high < opts.rel_tol && w_rel < opts.rel_tol) {
      out.order = order;
      out.log_a = a.log_a;
      out.log_b = std::move(log_b);
      out.tail_low = std::exp(a.log_tail.low - a.log_partial);
      out.tail_high = a_rel_high;
      return out;
    }
    if (order >= cap) {
      const double achieved = std::max(a_rel_high, w_rel);
      throw TruncationError("series truncation bound " + std::to_string(achieved) +
                                " not below " + std::to_string(opts.rel_tol) + " at order cap " +
                                std::to_string(cap),
                            achieved, order);
    }
    order = std::min(2 * order, cap);
  }
}

double BilinearExpectation::value() const {
  return std::exp(log_add(log_lower, log_upper) - std::log(2.0));
}
double BilinearExpectation::lower() const { return std::exp(log_lower); }
double BilinearExpectation::upper() const { return std::exp(log_upper); }

BilinearExpectation bilinear_expectation(const Matrix& a, double rel_tol, int max_order) {
  require_finite(a, "bilinear_expectation input");
  if (a.rows() < 1 || a.cols() < 1) throw ArgumentError("bilinear_expectation of empty matrix");
  if (!(rel_tol > 0.0)) throw ArgumentError("bilinear_expectation requires rel_tol > 0");
  // u'Av = v'A'u, so the larger dimension can always be put first.
  const Matrix tall = a.rows() >= a.cols() ? a : Matrix(a.transpose());
  const int m = static_cast<int>(tall.rows());

  BilinearExpectation out;
  const double norm_sq = tall.squaredNorm();
  if (norm_sq == 0.0) return out;

  const Vector lambda = gram_eigenvalues(tall);
  const double lambda_sum = lambda.sum();
  const int cap = std::max(max_order, 2);
  int order = initial_order(lambda.maxCoeff(), cap);
  for (;;) {
    const ASeriesEval s = eval_a_series(lambda, lambda_sum, m, order);
    const double rel = std::exp(s.log_tail.high - s.log_partial);
    if (rel < rel_tol) {
      out.order = order;
      out.log_partial = s.log_partial;
      out.log_lower = log_add(s.log_partial, s.log_tail.low);
      out.log_upper = log_add(s.log_partial, s.log_tail.high);
      return out;
    }
    if (order >= cap)
      throw TruncationError("bilinear expectation tail bound " + std::to_string(rel) +
                                " not below " + std::to_string(rel_tol) + " at order cap " +
                                std::to_string(cap),
                            rel, order);
    order = std::min(2 * order, cap);
  }
}

}  // namespace bsvd
