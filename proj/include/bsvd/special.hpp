#pragma once

// Special functions and the series used by the marginal likelihood of a
// singular-value triple: Bessel functions, von Mises-Fisher constants,
// normal and Dirichlet-average moments, and the bilinear-form expectation.

#include <vector>

#include "bsvd/linalg.hpp"

namespace bsvd {

/// log I_nu(x) for nu >= 0, x >= 0. Summed around the largest term of the
/// power series, so it neither overflows nor loses accuracy for large x.
double log_bessel_i(double order, double x);

/// log of the vMF normalizing constant c_p(kappa) on the unit sphere in R^p.
double log_vmf_const(int dim, double kappa);

/// E[X^{2l}], l = 0..max_order, for X ~ normal(mean, variance).
std::vector<double> normal_even_moments(double mean, double variance, int max_order);

/// log E[X^{2l}], l = 0..max_order. Safe for orders where the moments
/// themselves overflow.
std::vector<double> log_normal_even_moments(double mean, double variance, int max_order);

/// E[(lambda'q)^l], l = 0..max_order, for q ~ Dirichlet(alpha).
std::vector<double> dirichlet_avg_moments(const Vector& lambda, const Vector& alpha,
                                          int max_order);

/// log E[(lambda'q)^l]; -inf where the moment is exactly zero.
std::vector<double> log_dirichlet_avg_moments(const Vector& lambda, const Vector& alpha,
                                              int max_order);

struct SeriesOptions {
  double rel_tol = 1e-10;
  int max_order = 5000;
};

/// Truncated coefficients of
///   E[exp(u'Av)]            = sum_l |A|^{2l} a_l
///   p(Y | d != 0)/p(Y | d=0) = sum_l |E|^{2l} a_l b_l.
///
/// Everything is stored as logarithms. tail_low and tail_high bound the
/// omitted tail of the a-series relative to its partial sum.
struct SeriesCoefficients {
  std::vector<double> log_a;
  std::vector<double> log_b;
  int order = 0;
  double tail_low = 0.0;
  double tail_high = 0.0;
  double log_norm_sq = 0.0;  // log |E|^2, -inf when E = 0

  /// log(|E|^{2l} a_l b_l).
  double log_weight(int l) const;
  /// log sum_{l <= order} |E|^{2l} a_l b_l.
  double log_weight_sum() const;
  /// log sum_{l <= order} |E|^{2l} a_l.
  double log_a_sum() const;
};

/// Coefficients for squared singular values `lambda` (eigenvalues of E'E)
/// of an mtilde x ntilde matrix, error precision phi and a
/// normal(mu, 1/psi) prior on the singular value. The order is chosen
/// adaptively so both the a-series tail bound and the weighted series tail
/// are below `opts.rel_tol` relative to their partial sums.
SeriesCoefficients bilinear_series_coeffs(const Vector& lambda, int mtilde, int ntilde, double phi,
                                          double mu, double psi,
                                          const SeriesOptions& opts = {});

struct TailBounds {
  double low = 0.0;
  double high = 0.0;
};

/// Bounds on sum_{l>r} E[(lambda'q)^l] Gamma(m/2) / (Gamma(m/2+l) Gamma(1+l) 4^l)
/// given lambda_min <= lambda_i <= lambda_max.
TailBounds series_tail_bounds(double lambda_min, double lambda_max, int r, int m);

/// Same bounds as natural logarithms (-inf for an empty tail).
TailBounds log_series_tail_bounds(double lambda_min, double lambda_max, int r, int m);

/// E[exp(u'Av)] for independent uniform unit vectors, with a certified
/// enclosing interval.
struct BilinearExpectation {
  double log_partial = 0.0;
  double log_lower = 0.0;
  double log_upper = 0.0;
  int order = 0;

  double value() const;
  double lower() const;
  double upper() const;
};

BilinearExpectation bilinear_expectation(const Matrix& a, double rel_tol = 1e-10,
                                         int max_order = 2000);

/// log(exp(a) + exp(b)) without overflow.
double log_add(double a, double b);

/// log sum_i exp(x_i).
double log_sum_exp(const std::vector<double>& x);

}  // namespace bsvd
