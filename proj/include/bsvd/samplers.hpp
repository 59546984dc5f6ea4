#pragma once

// Random variate generators on spheres, Stiefel manifolds and the singular
// value mixture.

#include "bsvd/linalg.hpp"
#include "bsvd/random.hpp"
#include "bsvd/special.hpp"

namespace bsvd {

/// Uniform draw from the unit sphere in R^p. For p = 1 returns +-1.
Vector sample_sphere(RandomSource& src, Eigen::Index p);

/// Uniform m x k matrix with orthonormal columns, built one column at a time
/// in the null space of the previous columns.
Matrix sample_stiefel_sequential(RandomSource& src, Eigen::Index m, Eigen::Index k);

/// von Mises-Fisher draw with density proportional to exp(u'theta), p >= 2.
Vector sample_vmf(RandomSource& src, const Vector& theta);

/// As sample_vmf but also accepts p = 1, where u = +-1 with odds
/// exp(theta):exp(-theta).
Vector sample_vmf_any(RandomSource& src, const Vector& theta);

/// Rejection sampler for f_l(d) ~ d^{2l} exp(-psi_t (d - mu_t)^2 / 2).
/// Builds the envelope once so repeated draws are cheap.
class FlSampler {
 public:
  FlSampler(int l, double mu_tilde, double psi_tilde);

  double operator()(RandomSource& src) const;

  /// log f_l up to its normalizing constant.
  double log_target(double d) const;
  double log_envelope_constant() const { return log_m_; }

 private:
  double log_proposal(double d) const;

  int l_;
  double mu_;
  double psi_;
  double center_[2] = {0.0, 0.0};
  double scale_[2] = {1.0, 1.0};
  double log_weight_[2] = {0.0, 0.0};
  double log_m_ = 0.0;
};

double sample_f_l(RandomSource& src, int l, double mu_tilde, double psi_tilde);

/// Draws component l with probability proportional to |E|^{2l} a_l b_l and
/// returns a draw from f_l with mu_t = mu psi/(phi+psi), psi_t = phi+psi.
double sample_d_mixture(RandomSource& src, const SeriesCoefficients& coeffs, double e_norm_sq,
                        double phi, double mu, double psi);

struct UnitPair {
  Vector u;
  Vector v;
};

/// Approximate draw of (u, v) with density proportional to exp(u'Av): start
/// at a signed pair of singular vectors chosen with probability
/// proportional to exp(sigma_k), then alternate exact vMF conditional draws.
UnitPair sample_joint_uv(RandomSource& src, const Matrix& a, int gibbs_refinements = 5);

}  // namespace bsvd
