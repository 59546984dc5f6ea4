#include "bsvd/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bsvd {

namespace {

constexpr std::size_t kMinLength = 100;

double mean_of(const double* x, std::size_t n) { return std::accumulate(x, x + n, 0.0) / n; }

// Autocovariance at lag k with divisor n.
double autocov(const double* x, std::size_t n, double mean, std::size_t k) {
  double s = 0.0;
  for (std::size_t t = 0; t + k < n; ++t) s += (x[t] - mean) * (x[t + k] - mean);
  return s / n;
}

double spectral_variance(const double* x, std::size_t n) {
  const double m = mean_of(x, n);
  const std::size_t w = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  double s = autocov(x, n, m, 0);
  for (std::size_t k = 1; k <= w && k < n; ++k)
    s += 2.0 * (1.0 - static_cast<double>(k) / (w + 1.0)) * autocov(x, n, m, k);
  return std::max(s, 0.0);
}

void require_chain(const std::vector<double>& chain, const char* what) {
  if (chain.size() < kMinLength)
    throw ArgumentError(std::string(what) + " needs at least " + std::to_string(kMinLength) +
                        " values, got " + std::to_string(chain.size()));
  for (double v : chain)
    if (!std::isfinite(v)) throw ArgumentError(std::string(what) + ": chain has non-finite values");
}

}  // namespace

double spectral_variance(const std::vector<double>& x) {
  if (x.empty()) throw ArgumentError("spectral_variance of an empty chain");
  return spectral_variance(x.data(), x.size());
}

double geweke_z(const std::vector<double>& chain, double first, double last) {
  require_chain(chain, "geweke_z");
  if (!(first > 0.0) || !(last > 0.0) || first + last > 1.0)
    throw ArgumentError("geweke_z requires positive segment fractions summing to at most 1");
  const std::size_t n = chain.size();
  const std::size_t na = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(first * n)));
  const std::size_t nb = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(last * n)));
  const double* a = chain.data();
  const double* b = chain.data() + (n - nb);
  const double sa = spectral_variance(a, na);
  const double sb = spectral_variance(b, nb);
  if (sa == 0.0 && sb == 0.0) throw DegenerateChainError("geweke_z: both segments are constant");
  return (mean_of(a, na) - mean_of(b, nb)) / std::sqrt(sa / na + sb / nb);
}

double effective_sample_size(const std::vector<double>& chain) {
  require_chain(chain, "effective_sample_size");
  const std::size_t n = chain.size();
  const double m = mean_of(chain.data(), n);
  const double g0 = autocov(chain.data(), n, m, 0);
  if (g0 <= 0.0) throw DegenerateChainError("effective_sample_size: chain is constant");

  double tau = 1.0;
  for (std::size_t k = 1; k < n; ++k) {
    const double rho = autocov(chain.data(), n, m, k) / g0;
    if (rho <= 0.0) break;
    tau += 2.0 * rho;
  }
  const double ess = n / std::max(tau, 1e-300);
  return std::clamp(ess, 1.0, static_cast<double>(n));
}

ScalarDiagnostics diagnose(const std::vector<double>& chain, double first, double last) {
  ScalarDiagnostics out;
  if (chain.size() < kMinLength) return out;
  try {
    out.geweke_z = geweke_z(chain, first, last);
  } catch (const DegenerateChainError&) {
  }
  try {
    out.ess = effective_sample_size(chain);
  } catch (const DegenerateChainError&) {
  }
  return out;
}

bool mcmc_success(const ScalarDiagnostics& d, const SuccessCriterion& c) {
  return d.geweke_z && d.ess && std::abs(*d.geweke_z) <= c.max_abs_z && *d.ess >= c.min_ess;
}

RankBaselines rank_baselines(const Matrix& y) {
  require_finite(y, "rank_baselines input");
  const Eigen::Index m = y.rows();
  const Eigen::Index n = y.cols();
  if (n < 2) throw ArgumentError("rank_baselines requires at least 2 columns");
  if (m < 2) throw ArgumentError("rank_baselines requires at least 2 rows");

  RankBaselines out;
  out.gram_eigenvalues = gram_eigenvalues(y);
  double best_gap = -1.0;
  const double tie = 1e-10 * out.gram_eigenvalues[0];
  for (Eigen::Index k = 1; k < n; ++k) {
    const double gap = out.gram_eigenvalues[k - 1] - out.gram_eigenvalues[k];
    if (gap > best_gap + tie) {
      best_gap = gap;
      out.k_hat_e = static_cast<int>(k);
    }
  }

  const Matrix centered = y.rowwise() - y.colwise().mean();
  const Vector sd = (centered.colwise().squaredNorm() / (m - 1.0)).cwiseSqrt().transpose();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (sd[j] > 1e-12 * (1.0 + y.col(j).cwiseAbs().maxCoeff()))
      keep.push_back(j);
    else
      out.zero_variance_columns.push_back(j);
  }
  out.corr_eigenvalues = Vector::Zero(n);
  if (!keep.empty()) {
    Matrix z(m, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c)
      z.col(c) = centered.col(keep[c]) / (sd[keep[c]] * std::sqrt(m - 1.0));
    const Matrix corr = z.transpose() * z;
    Eigen::SelfAdjointEigenSolver<Matrix> es(corr, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("correlation eigen decomposition failed");
    out.corr_eigenvalues.head(corr.rows()) = es.eigenvalues().reverse();
  }
  // Unit eigenvalues of an exact identity correlation must not count.
  for (Eigen::Index k = 0; k < n; ++k)
    if (out.corr_eigenvalues[k] > 1.0 + 1e-10) ++out.k_hat_c;
  return out;
}

double ase(const Matrix& m_hat, const Matrix& m_true) {
  if (m_hat.rows() != m_true.rows() || m_hat.cols() != m_true.cols())
    throw ArgumentError("ase: dimension mismatch " + shape_string(m_hat.rows(), m_hat.cols()) +
                        " vs " + shape_string(m_true.rows(), m_true.cols()));
  return (m_hat - m_true).squaredNorm() / static_cast<double>(m_hat.size());
}

double ase_ratio(const Matrix& m_bayes, const Matrix& m_ls, const Matrix& m_true) {
  return ase(m_bayes, m_true) / ase(m_ls, m_true);
}

}  // namespace bsvd
