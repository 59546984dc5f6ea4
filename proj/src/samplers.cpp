#include "bsvd/samplers.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace bsvd {

namespace {

constexpr long kMaxProposals = 1000000;
constexpr double kTDof = 5.0;

double log_t5_density(double z) {
  static const double log_norm = std::lgamma(0.5 * (kTDof + 1.0)) - std::lgamma(0.5 * kTDof) -
                                 0.5 * std::log(kTDof * std::numbers::pi);
  return log_norm - 0.5 * (kTDof + 1.0) * std::log1p(z * z / kTDof);
}

double sample_t5(RandomSource& src) {
  const double chi = src.gamma(0.5 * kTDof, 0.5);
  return src.normal() / std::sqrt(chi / kTDof);
}

}  // namespace

Vector sample_sphere(RandomSource& src, Eigen::Index p) {
  if (p < 1) throw ArgumentError("sample_sphere requires p >= 1");
  if (p == 1) return Vector::Constant(1, src.uniform() < 0.5 ? -1.0 : 1.0);
  for (;;) {
    Vector z = src.normal_vector(p);
    const double norm = z.norm();
    if (norm > 0.0) return z / norm;
  }
}

Matrix sample_stiefel_sequential(RandomSource& src, Eigen::Index m, Eigen::Index k) {
  if (k < 1 || k > m)
    throw ArgumentError("sample_stiefel_sequential requires 1 <= k <= m (got m=" +
                        std::to_string(m) + ", k=" + std::to_string(k) + ")");
  Matrix u(m, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Matrix basis = null_basis(u.leftCols(j), m);
    u.col(j) = basis * sample_sphere(src, m - j);
  }
  return u;
}

Vector sample_vmf(RandomSource& src, const Vector& theta) {
  const Eigen::Index p = theta.size();
  if (p < 2) throw ArgumentError("sample_vmf requires dimension >= 2, got " + std::to_string(p));
  require_finite(theta, "vMF parameter");
  const double kappa = theta.norm();
  if (kappa == 0.0) return sample_sphere(src, p);
  const Vector mean_dir = theta / kappa;

  // Wood (1994): sample w = u'mean_dir by rejection from a beta-based proposal.
  const double pm1 = static_cast<double>(p - 1);
  const double b = pm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + pm1 * pm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + pm1 * std::log(1.0 - x0 * x0);
  double w = 0.0;
  long tries = 0;
  for (;;) {
    if (++tries > kMaxProposals) throw SamplerError("vMF rejection loop exceeded proposal cap");
    const double z = src.beta(0.5 * pm1, 0.5 * pm1);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = src.uniform();
    if (kappa * w + pm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }

  Vector tangent = src.normal_vector(p);
  tangent -= mean_dir * mean_dir.dot(tangent);
  const double tn = tangent.norm();
  if (tn == 0.0) return mean_dir;
  const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
  Vector out = w * mean_dir + s * (tangent / tn);
  return out / out.norm();
}

Vector sample_vmf_any(RandomSource& src, const Vector& theta) {
  if (theta.size() == 1) {
    const double t = theta[0];
    if (!std::isfinite(t)) throw ArgumentError("vMF parameter contains non-finite entries");
    const double p_plus = 1.0 / (1.0 + std::exp(-2.0 * t));
    return Vector::Constant(1, src.uniform() < p_plus ? 1.0 : -1.0);
  }
  return sample_vmf(src, theta);
}

FlSampler::FlSampler(int l, double mu_tilde, double psi_tilde)
    : l_(l), mu_(mu_tilde), psi_(psi_tilde) {
  if (l < 0) throw ArgumentError("f_l requires l >= 0");
  if (!(psi_tilde > 0.0) || !std::isfinite(psi_tilde) || !std::isfinite(mu_tilde))
    throw ArgumentError("f_l requires finite mu and psi > 0");
  if (l == 0) return;

  // Stationary points of log f_l: 2l/d = psi (d - mu).
  const double disc = std::sqrt(mu_ * mu_ + 8.0 * l_ / psi_);
  center_[0] = 0.5 * (mu_ + disc);
  center_[1] = 0.5 * (mu_ - disc);
  for (int k = 0; k < 2; ++k) {
    const double c = center_[k];
    scale_[k] = 1.0 / std::sqrt(2.0 * l_ / (c * c) + psi_);
    log_weight_[k] = log_target(c) + std::log(scale_[k]);
  }
  const double total = log_add(log_weight_[0], log_weight_[1]);
  log_weight_[0] -= total;
  log_weight_[1] -= total;

  auto ratio = [this](double d) { return log_target(d) - log_proposal(d); };
  double best = -std::numeric_limits<double>::infinity();
  double best_d = center_[0];
  double step = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double h = 0.02 * scale_[k];
    for (int i = -600; i <= 600; ++i) {
      const double d = center_[k] + i * h;
      const double r = ratio(d);
      if (r > best) {
        best = r;
        best_d = d;
        step = h;
      }
    }
  }
  // Golden-section polish around the best grid point.
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = best_d - step;
  double hi = best_d + step;
  for (int it = 0; it < 60; ++it) {
    const double x1 = hi - g * (hi - lo);
    const double x2 = lo + g * (hi - lo);
    if (ratio(x1) > ratio(x2))
      hi = x2;
    else
      lo = x1;
  }
  best = std::max(best, ratio(0.5 * (lo + hi)));
  log_m_ = best + 1e-6;
}

double FlSampler::log_target(double d) const {
  const double z = d - mu_;
  const double poly = l_ == 0 ? 0.0 : 2.0 * l_ * std::log(std::abs(d));
  return poly - 0.5 * psi_ * z * z;
}

double FlSampler::log_proposal(double d) const {
  double out = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 2; ++k) {
    const double z = (d - center_[k]) / scale_[k];
    out = log_add(out, log_weight_[k] + log_t5_density(z) - std::log(scale_[k]));
  }
  return out;
}

double FlSampler::operator()(RandomSource& src) const {
  if (l_ == 0) return src.normal(mu_, 1.0 / std::sqrt(psi_));
  for (long tries = 0; tries < kMaxProposals; ++tries) {
    const int k = std::log(src.uniform()) < log_weight_[0] ? 0 : 1;
    const double d = center_[k] + scale_[k] * sample_t5(src);
    const double log_accept = log_target(d) - log_proposal(d) - log_m_;
    if (std::log(src.uniform()) <= log_accept) return d;
  }
  throw SamplerError("f_l rejection sampler exceeded " + std::to_string(kMaxProposals) +
                     " proposals (l=" + std::to_string(l_) + ")");
}

double sample_f_l(RandomSource& src, int l, double mu_tilde, double psi_tilde) {
  return FlSampler(l, mu_tilde, psi_tilde)(src);
}

double sample_d_mixture(RandomSource& src, const SeriesCoefficients& coeffs, double e_norm_sq,
                        double phi, double mu, double psi) {
  if (!(e_norm_sq >= 0.0)) throw ArgumentError("sample_d_mixture requires |E|^2 >= 0");
  if (!(phi > 0.0) || !(psi > 0.0)) throw ArgumentError("sample_d_mixture requires phi, psi > 0");
  if (static_cast<int>(coeffs.log_a.size()) <= coeffs.order ||
      static_cast<int>(coeffs.log_b.size()) <= coeffs.order)
    throw ArgumentError("sample_d_mixture: coefficient arrays shorter than the series order");

  int l = 0;
  if (e_norm_sq > 0.0) {
    const double log_e = std::log(e_norm_sq);
    std::vector<double> w(static_cast<std::size_t>(coeffs.order) + 1);
    for (int k = 0; k <= coeffs.order; ++k) w[k] = k * log_e + coeffs.log_a[k] + coeffs.log_b[k];
    l = static_cast<int>(src.categorical_log(w));
  }
  return sample_f_l(src, l, mu * psi / (phi + psi), phi + psi);
}

UnitPair sample_joint_uv(RandomSource& src, const Matrix& a, int gibbs_refinements) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  if (n < 1 || m < n)
    throw ArgumentError("sample_joint_uv requires rows >= cols >= 1, got " + shape_string(m, n));
  if (gibbs_refinements < 0) throw ArgumentError("gibbs_refinements must be >= 0");
  require_finite(a, "sample_joint_uv matrix");

  if (a.squaredNorm() == 0.0) return {sample_sphere(src, m), sample_sphere(src, n)};

  // (u_k, v_k) and (-u_k, -v_k) both give u'Av = sigma_k, so the mode is
  // chosen with weight exp(sigma_k) and its sign uniformly.
  const SvdTriple<double> f = svd(a);
  std::vector<double> log_w(static_cast<std::size_t>(f.d.size()));
  for (Eigen::Index k = 0; k < f.d.size(); ++k) log_w[k] = f.d[k];
  const std::size_t k = src.categorical_log(log_w);
  const double sign = src.uniform() < 0.5 ? -1.0 : 1.0;
  UnitPair out{sign * f.U.col(k), sign * f.V.col(k)};

  for (int it = 0; it < gibbs_refinements; ++it) {
    out.u = sample_vmf_any(src, a * out.v);
    out.v = sample_vmf_any(src, a.transpose() * out.u);
  }
  return out;
}

}  // namespace bsvd
