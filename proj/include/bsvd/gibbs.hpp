#pragma once

// Fixed- and variable-rank Gibbs samplers for the model
//   Y = U D V' + E,  E_ij ~ normal(0, 1/phi),
// with uniform priors on the singular vectors, d_j ~ normal(mu, 1/psi) on
// active columns and a prior on the rank K.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bsvd/diagnostics.hpp"
#include "bsvd/linalg.hpp"
#include "bsvd/random.hpp"
#include "bsvd/special.hpp"

namespace bsvd {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// A pinned column keeps one of its direction vectors fixed and is always
/// active (used for additive row or column effects).
enum class Pin : std::uint8_t { none, left, right };

struct FactorState {
  Matrix U;  // m x n, zero columns where inactive
  Vector d;
  Matrix V;  // n x n
  std::vector<std::uint8_t> active;
  std::vector<Pin> pin;
  double phi = 1.0;
  double mu = 0.0;
  double psi = 1.0;

  static FactorState empty(Eigen::Index m, Eigen::Index n);

  Eigen::Index rows() const { return U.rows(); }
  Eigen::Index cols() const { return V.rows(); }
  /// Number of active, unpinned columns.
  int rank() const;
  int active_count() const;
  int pinned_count() const;
  Matrix mean() const;
  void deactivate(Eigen::Index j);

  /// Throws ContractError if a zero/active mismatch or a loss of
  /// orthonormality beyond `tol` is found.
  void check_invariants(double tol = 1e-8) const;

  /// Transposed state: U and V exchange roles, left and right pins swap.
  FactorState transposed() const;
};

enum class MuPrior {
  independent,    // mu ~ normal(mu0, v0_sq)
  scaled_by_psi,  // mu ~ normal(mu0, 1/psi)
  detectability,  // mu ~ normal(detect_scale / sqrt(phi), 1/psi)
};

struct PriorConfig {
  double mu0 = 0.0;
  double v0_sq = 1.0;
  double eta0 = 2.0;
  double tau0_sq = 1.0;
  double nu0 = 2.0;
  double sigma0_sq = 1.0;
  /// p(K = k) for k = 0..n_free; empty means uniform.
  Vector rank_prior;
  std::optional<double> phi_fixed;
  std::optional<std::pair<double, double>> mu_psi_fixed;  // (mu, psi)
  MuPrior mu_prior = MuPrior::independent;
  double detect_scale = 0.0;
  /// Prior variance of d for pinned columns (prior mean 0).
  double pinned_d_variance = 100.0;

  /// Throws ArgumentError when a field is out of range for n_free columns.
  void validate(int n_free) const;
  double rank_prior_at(int k, int n_free) const;
};

struct EmpiricalBayes {
  double sigma0_sq = 0.0;
  double mu0 = 0.0;
  double v0_sq = 0.0;
  double tau0_sq = 0.0;
  bool floored = false;
};

/// Rank-averaged plug-in estimates. Degenerate (zero) scale estimates are
/// floored at 1e-8 times the mean square of Y (1e-8 if Y = 0).
EmpiricalBayes empirical_bayes_hyperparams(const Matrix& y);

/// Empirical-Bayes preset: nu0 = eta0 = 2, uniform rank prior.
PriorConfig empirical_bayes_prior(const Matrix& y);
/// phi ~ exponential(1), psi ~ exponential(1), mu ~ normal(0, 1/psi).
PriorConfig diffuse_prior();
/// Diffuse preset with mu ~ normal(sqrt(n+m+2 sqrt(nm)) / sqrt(phi), 1/psi).
PriorConfig detectability_prior(Eigen::Index m, Eigen::Index n);

struct ChainConfig {
  long iterations = 2000;
  long burn_in = 1000;
  long thin = 10;
  std::uint64_t seed = 0;
  int gibbs_refinements = 5;
  double series_rel_tol = 1e-10;
  int series_max_order = 5000;
  bool random_scan_order = false;
  /// Freeze the rank at this value (steps B and C only).
  std::optional<int> fixed_rank;
  double geweke_first = 0.1;
  double geweke_last = 0.5;

  void validate() const;
};

struct ScanSample {
  long scan = 0;
  int rank = 0;
  double phi = 0.0;
  double mu = 0.0;
  double psi = 0.0;
  Vector d;
};

struct ChainSummary {
  /// Counts of K over the retained (post burn-in) scans.
  std::vector<long> rank_histogram;
  /// Average of U D V' over the retained scans.
  Matrix M_mean;
  /// Every thin-th retained scan.
  std::vector<ScanSample> samples;
  std::map<std::string, ScalarDiagnostics> diagnostics;
  long retained_scans = 0;

  Vector rank_posterior() const;
  /// argmax_k p(K = k | Y); ties go to the smallest k.
  int posterior_mode_rank() const;
};

/// Accumulates retained-scan statistics for a chain.
class ChainAccumulator {
 public:
  ChainAccumulator(Eigen::Index m, Eigen::Index n, int n_free, const ChainConfig& cfg);

  /// Record the state after scan `scan` (0-based).
  void record(long scan, const FactorState& state);
  ChainSummary finish(const ChainConfig& cfg) const;

 private:
  long burn_in_;
  long thin_;
  ChainSummary summary_;
  Matrix m_sum_;
};

/// Single-column conditional draws given Y and the rest of the state.
void sample_u_column(FactorState& state, const Matrix& y, Eigen::Index j, RandomSource& src);
void sample_v_column(FactorState& state, const Matrix& y, Eigen::Index j, RandomSource& src);
void sample_d_fixed(FactorState& state, const Matrix& y, Eigen::Index j, RandomSource& src,
                    const PriorConfig& priors = {});
void sample_phi_mu_psi(FactorState& state, const Matrix& y, const PriorConfig& priors,
                       RandomSource& src);

/// Prior odds that a free column becomes active given k_minus other active
/// free columns out of n_free. May be 0 or +inf; throws ArgumentError when
/// both prior masses are zero.
double conditional_prior_odds_active(const Vector& rank_prior, int k_minus, int n_free);
double log_conditional_prior_odds_active(const Vector& rank_prior, int k_minus, int n_free);

struct ActivationOdds {
  double log_prior_odds = 0.0;
  double log_bayes_factor = 0.0;
  double log_odds = 0.0;
  SeriesCoefficients coeffs;
  Matrix e_tilde;  // projected residual N_u' E_{-j} N_v
  Matrix nu;       // null-space bases of the other active columns
  Matrix nv;
  double e_norm_sq = 0.0;

  double probability_active() const;
};

/// Odds that d_j != 0 given everything except column j.
ActivationOdds odds_dj_nonzero(const FactorState& state, const Matrix& y, Eigen::Index j,
                               const PriorConfig& priors, double series_rel_tol = 1e-10,
                               int series_max_order = 5000);

/// One full scan: activation step for every free column, fixed-rank updates
/// of active columns, then (phi, mu, psi).
void gibbs_step_variable(FactorState& state, const Matrix& y, const PriorConfig& priors,
                         RandomSource& src, const ChainConfig& cfg);

/// Runs a chain from K = 0 with (phi, mu, psi) at their prior modes, or from
/// the rank-K truncated SVD when cfg.fixed_rank is set. Masked-out entries
/// are imputed from their conditional distribution at every scan.
ChainSummary run_chain(const Matrix& y, const std::optional<Mask>& observed,
                       const PriorConfig& priors, const ChainConfig& cfg);

/// Prior-mode start values (phi, mu, psi) for the given configuration.
void set_prior_modes(FactorState& state, const PriorConfig& priors);

/// Initialize the first k free columns from the truncated SVD of y.
void init_from_svd(FactorState& state, const Matrix& y, int k);

}  // namespace bsvd
