#pragma once

// Generalized bilinear models: theta = X beta + U D V' + E on the link scale,
// with binary (logit) or count (log) observations.

#include <vector>

#include "bsvd/gibbs.hpp"

namespace bsvd {

enum class Link { logit, log };

Link parse_link(const std::string& name);
std::string to_string(Link link);

struct RelationalData {
  Matrix y;
  Mask observed;
  /// Per-cell covariates, each m x n. An intercept is always added in front.
  std::vector<Matrix> covariates;

  static RelationalData from_matrix(const Matrix& y);
  Eigen::Index rows() const { return y.rows(); }
  Eigen::Index cols() const { return y.cols(); }
  /// Number of regression coefficients including the intercept.
  Eigen::Index n_coef() const { return static_cast<Eigen::Index>(covariates.size()) + 1; }
  void validate(Link link) const;
};

struct GlmConfig {
  Link link = Link::logit;
  bool fixed_row_effect = true;  // a column of U held at 1/sqrt(m)
  bool fixed_col_effect = true;  // a column of V held at 1/sqrt(n)
  double beta_prior_variance = 100.0;
  double d_prior_variance = 100.0;
  double phi = 1.0;
  bool estimate_phi = false;

  void validate(Eigen::Index m, Eigen::Index n) const;
};

/// Prior for the bilinear part: normal(0, d_prior_variance) singular values,
/// fixed phi unless estimate_phi, uniform rank prior.
PriorConfig glm_prior(const GlmConfig& cfg);

struct LatentState {
  Matrix theta;
  Vector beta;
  FactorState factor;
};

double log_likelihood(Link link, double y, double theta);
double inverse_link(Link link, double theta);
/// log p(y | mean mu_hat): Bernoulli for logit, Poisson for log.
double log_predictive(Link link, double y, double mu_hat);

/// X beta as an m x n matrix.
Matrix linear_predictor(const RelationalData& data, const Vector& beta);

/// Cellwise Metropolis replacement of theta by X beta + U D V' + noise.
/// Returns the number of accepted cells.
long latent_mh_update(LatentState& state, const RelationalData& data, const GlmConfig& cfg,
                      RandomSource& src);

/// Conjugate draw of beta given theta - U D V'.
void update_beta(LatentState& state, const RelationalData& data, const GlmConfig& cfg,
                 RandomSource& src);

/// Pinned effect columns and theta initialised from the data; K = 0 (or the
/// fixed rank, from the SVD of the initial theta).
LatentState init_latent_state(const RelationalData& data, const GlmConfig& cfg,
                              const PriorConfig& priors, const ChainConfig& chain);

struct GlmSummary {
  ChainSummary chain;
  std::vector<Vector> beta_samples;  // at the thinned scans
  Vector beta_mean;
  Matrix mean_response;  // posterior mean of the inverse link of theta
  double acceptance_rate = 0.0;
};

GlmSummary run_glm_chain(const RelationalData& data, const GlmConfig& glm_cfg,
                         const PriorConfig& priors, const ChainConfig& cfg);

/// Fold of cell (i, j): a hash of (i, j, seed) modulo `folds`.
int cv_fold(Eigen::Index i, Eigen::Index j, std::uint64_t seed, int folds);

/// Summed log predictive probability of held-out cells for each rank.
std::vector<double> cross_validate_lpp(const RelationalData& data, const std::vector<int>& ranks,
                                       int folds, const GlmConfig& glm_cfg,
                                       const PriorConfig& priors, const ChainConfig& cfg);

}  // namespace bsvd
