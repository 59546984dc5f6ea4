#pragma once

// MCMC convergence diagnostics, frequentist rank estimates and error
// summaries.

#include <optional>
#include <vector>

#include "bsvd/linalg.hpp"

namespace bsvd {

struct ScalarDiagnostics {
  std::optional<double> geweke_z;
  std::optional<double> ess;
};

/// Spectral density at frequency zero, Bartlett window of width
/// floor(sqrt(n)).
double spectral_variance(const std::vector<double>& x);

/// Geweke z comparing the mean of the first `first` fraction of the chain
/// with the mean of the last `last` fraction. Needs at least 100 values.
double geweke_z(const std::vector<double>& chain, double first = 0.1, double last = 0.5);

/// N / (1 + 2 sum rho_k) with the sum cut at the first non-positive
/// autocorrelation; clipped to [1, N].
double effective_sample_size(const std::vector<double>& chain);

/// geweke_z and effective_sample_size, or empty fields when the chain is too
/// short or constant.
ScalarDiagnostics diagnose(const std::vector<double>& chain, double first = 0.1,
                           double last = 0.5);

struct SuccessCriterion {
  double max_abs_z = 2.0;
  double min_ess = 100.0;
};

bool mcmc_success(const ScalarDiagnostics& d, const SuccessCriterion& c = {});

struct RankBaselines {
  int k_hat_e = 0;  // largest gap in the eigenvalues of Y'Y, smallest k on ties
  int k_hat_c = 0;  // eigenvalues of corr(Y) above 1
  Vector gram_eigenvalues;
  Vector corr_eigenvalues;
  std::vector<Eigen::Index> zero_variance_columns;
};

RankBaselines rank_baselines(const Matrix& y);

/// |M_hat - M_true|^2 / (mn).
double ase(const Matrix& m_hat, const Matrix& m_true);
double ase_ratio(const Matrix& m_bayes, const Matrix& m_ls, const Matrix& m_true);

}  // namespace bsvd
