#include "bsvd/glm.hpp"

#include <cmath>

namespace bsvd {

namespace {

using Index = Eigen::Index;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

RelationalData transpose_data(const RelationalData& d) {
  RelationalData t;
  t.y = d.y.transpose();
  t.observed = d.observed.transpose();
  for (const Matrix& x : d.covariates) t.covariates.push_back(x.transpose());
  return t;
}

// Pinned effect columns in working orientation. `flip` means the working
// rows are the caller's columns.
void pin_effects(FactorState& f, const GlmConfig& cfg, bool flip) {
  const Index m = f.rows();
  const Index n = f.cols();
  const Vector ones_m = Vector::Constant(m, 1.0 / std::sqrt(static_cast<double>(m)));
  const Vector ones_n = Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));

  std::vector<std::pair<Index, Pin>> pins;
  if (cfg.fixed_row_effect) pins.push_back({0, flip ? Pin::right : Pin::left});
  if (cfg.fixed_col_effect) pins.push_back({cfg.fixed_row_effect ? 1 : 0, flip ? Pin::left : Pin::right});

  for (const auto& [j, p] : pins) {
    f.pin[j] = p;
    f.active[j] = 1;
    f.d[j] = 0.0;
    if (p == Pin::left)
      f.U.col(j) = ones_m;
    else
      f.V.col(j) = ones_n;
  }
  // Free halves: orthogonal to the fixed vectors already placed.
  for (const auto& [j, p] : pins) {
    const bool left = p == Pin::left;
    const Matrix& side = left ? f.V : f.U;
    std::vector<Index> set;
    for (Index k = 0; k < n; ++k)
      if (k != j && f.active[k] && side.col(k).squaredNorm() > 0.0) set.push_back(k);
    Matrix others(side.rows(), static_cast<Index>(set.size()));
    for (std::size_t c = 0; c < set.size(); ++c) others.col(c) = side.col(set[c]);
    const Vector free_dir = null_basis(others, side.rows()).col(0);
    if (left)
      f.V.col(j) = free_dir;
    else
      f.U.col(j) = free_dir;
  }
}

LatentState init_state(const RelationalData& data, const GlmConfig& cfg, const PriorConfig& priors,
                       const ChainConfig& chain, bool flip) {
  const Index m = data.rows();
  const Index n = data.cols();
  LatentState s;
  s.theta = Matrix::Zero(m, n);
  double sum = 0.0;
  long count = 0;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) {
      if (!data.observed(i, j)) continue;
      const double y = data.y(i, j);
      s.theta(i, j) = cfg.link == Link::logit ? (y > 0.5 ? 1.0 : -1.0) : std::log(y + 0.5);
      sum += s.theta(i, j);
      ++count;
    }
  }
  const double fill = count > 0 ? sum / count : 0.0;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i)
      if (!data.observed(i, j)) s.theta(i, j) = fill;

  s.beta = Vector::Zero(data.n_coef());
  s.beta[0] = fill;
  s.factor = FactorState::empty(m, n);
  pin_effects(s.factor, cfg, flip);
  set_prior_modes(s.factor, priors);
  if (chain.fixed_rank) init_from_svd(s.factor, s.theta - linear_predictor(data, s.beta), *chain.fixed_rank);
  return s;
}

}  // namespace

Link parse_link(const std::string& name) {
  if (name == "logit") return Link::logit;
  if (name == "log") return Link::log;
  throw ArgumentError("unknown link '" + name + "' (expected logit or log)");
}

std::string to_string(Link link) { return link == Link::logit ? "logit" : "log"; }

RelationalData RelationalData::from_matrix(const Matrix& y) {
  RelationalData d;
  d.y = y;
  d.observed = Mask::Constant(y.rows(), y.cols(), true);
  return d;
}

void RelationalData::validate(Link link) const {
  if (y.rows() < 1 || y.cols() < 1) throw ArgumentError("relational data is empty");
  if (observed.rows() != y.rows() || observed.cols() != y.cols())
    throw ArgumentError("observation mask shape does not match data");
  if (observed.count() < 1) throw ArgumentError("relational data has no observed entries");
  for (const Matrix& x : covariates) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
      throw ArgumentError("covariate shape " + shape_string(x.rows(), x.cols()) +
                          " does not match data " + shape_string(y.rows(), y.cols()));
    require_finite(x, "covariate");
  }
  for (Index j = 0; j < y.cols(); ++j) {
    for (Index i = 0; i < y.rows(); ++i) {
      if (!observed(i, j)) continue;
      const double v = y(i, j);
      const bool valid = link == Link::logit ? (v == 0.0 || v == 1.0)
                                             : (v >= 0.0 && std::isfinite(v) && v == std::floor(v));
      if (!valid)
        throw ArgumentError("observed entry (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
                            ") = " + std::to_string(v) +
                            (link == Link::logit ? " is not binary" : " is not a count"));
    }
  }
}

void GlmConfig::validate(Index m, Index n) const {
  if (!(beta_prior_variance > 0.0)) throw ArgumentError("beta prior variance must be positive");
  if (!(d_prior_variance > 0.0)) throw ArgumentError("singular value prior variance must be positive");
  if (!(phi > 0.0)) throw ArgumentError("latent precision must be positive");
  const Index pins = (fixed_row_effect ? 1 : 0) + (fixed_col_effect ? 1 : 0);
  if (pins > 0 && std::min(m, n) < 2)
    throw ArgumentError("fixed effect columns need at least 2 rows and 2 columns");
  if (pins > std::min(m, n)) throw ArgumentError("too many pinned columns for the data");
}

PriorConfig glm_prior(const GlmConfig& cfg) {
  PriorConfig p;
  if (!cfg.estimate_phi) p.phi_fixed = cfg.phi;
  p.mu_psi_fixed = std::make_pair(0.0, 1.0 / cfg.d_prior_variance);
  p.pinned_d_variance = cfg.d_prior_variance;
  return p;
}

double log_likelihood(Link link, double y, double theta) {
  if (link == Link::logit) return y * theta - softplus(theta);
  return y * theta - std::exp(theta) - std::lgamma(y + 1.0);
}

double inverse_link(Link link, double theta) {
  if (link == Link::logit) return theta >= 0.0 ? 1.0 / (1.0 + std::exp(-theta)) : std::exp(theta) / (1.0 + std::exp(theta));
  return std::exp(theta);
}

double log_predictive(Link link, double y, double mu_hat) {
  if (link == Link::logit) return y > 0.5 ? std::log(mu_hat) : std::log1p(-mu_hat);
  return y * std::log(mu_hat) - mu_hat - std::lgamma(y + 1.0);
}

Matrix linear_predictor(const RelationalData& data, const Vector& beta) {
  if (beta.size() != data.n_coef())
    throw ArgumentError("beta has " + std::to_string(beta.size()) + " entries, expected " +
                        std::to_string(data.n_coef()));
  Matrix out = Matrix::Constant(data.rows(), data.cols(), beta[0]);
  for (std::size_t p = 0; p < data.covariates.size(); ++p) out += beta[p + 1] * data.covariates[p];
  return out;
}

long latent_mh_update(LatentState& state, const RelationalData& data, const GlmConfig& cfg,
                      RandomSource& src) {
  const Matrix mean = linear_predictor(data, state.beta) + state.factor.mean();
  const double sd = 1.0 / std::sqrt(state.factor.phi);
  long accepted = 0;
  for (Index j = 0; j < data.cols(); ++j) {
    for (Index i = 0; i < data.rows(); ++i) {
      const double prop = mean(i, j) + sd * src.normal();
      if (!data.observed(i, j)) {
        state.theta(i, j) = prop;
        ++accepted;
        continue;
      }
      const double y = data.y(i, j);
      const double log_ratio = log_likelihood(cfg.link, y, prop) - log_likelihood(cfg.link, y, state.theta(i, j));
      if (log_ratio >= 0.0 || std::log(src.uniform()) < log_ratio) {
        state.theta(i, j) = prop;
        ++accepted;
      }
    }
  }
  return accepted;
}

void update_beta(LatentState& state, const RelationalData& data, const GlmConfig& cfg,
                 RandomSource& src) {
  const Index p = data.n_coef();
  const Matrix resid = state.theta - state.factor.mean();
  std::vector<const Matrix*> cols;
  const Matrix ones = Matrix::Ones(data.rows(), data.cols());
  cols.push_back(&ones);
  for (const Matrix& x : data.covariates) cols.push_back(&x);

  const double phi = state.factor.phi;
  Matrix prec = Matrix::Identity(p, p) / cfg.beta_prior_variance;
  Vector rhs(p);
  for (Index a = 0; a < p; ++a) {
    rhs[a] = phi * cols[a]->cwiseProduct(resid).sum();
    for (Index b = 0; b <= a; ++b) {
      const double v = phi * cols[a]->cwiseProduct(*cols[b]).sum();
      prec(a, b) += v;
      if (a != b) prec(b, a) += v;
    }
  }
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) throw NumericalError("regression posterior precision is not positive definite");
  const Vector mean = llt.solve(rhs);
  // prec = L L', so L'^{-1} z has covariance prec^{-1}.
  const Vector z = src.normal_vector(p);
  state.beta = mean + llt.matrixU().solve(z);
}

LatentState init_latent_state(const RelationalData& data, const GlmConfig& cfg,
                              const PriorConfig& priors, const ChainConfig& chain) {
  data.validate(cfg.link);
  cfg.validate(data.rows(), data.cols());
  if (data.rows() < data.cols())
    throw ArgumentError("init_latent_state expects rows >= cols; run_glm_chain orients data itself");
  return init_state(data, cfg, priors, chain, false);
}

GlmSummary run_glm_chain(const RelationalData& data_in, const GlmConfig& glm_cfg,
                         const PriorConfig& priors, const ChainConfig& cfg) {
  cfg.validate();
  data_in.validate(glm_cfg.link);
  glm_cfg.validate(data_in.rows(), data_in.cols());
  const bool flip = data_in.rows() < data_in.cols();
  const RelationalData data = flip ? transpose_data(data_in) : data_in;
  const Index m = data.rows();
  const Index n = data.cols();

  LatentState state = init_state(data, glm_cfg, priors, cfg, flip);
  const int n_free = static_cast<int>(n) - state.factor.pinned_count();
  priors.validate(n_free);
  if (cfg.fixed_rank && *cfg.fixed_rank > n_free)
    throw ArgumentError("fixed rank " + std::to_string(*cfg.fixed_rank) + " exceeds the " +
                        std::to_string(n_free) + " free columns");

  RandomSource src(cfg.seed);
  ChainAccumulator acc(m, n, n_free, cfg);
  GlmSummary out;
  Matrix response_sum = Matrix::Zero(m, n);
  Vector beta_sum = Vector::Zero(data.n_coef());
  long retained = 0;
  long accepted = 0;

  for (long scan = 0; scan < cfg.iterations; ++scan) {
    const Matrix y_tilde = state.theta - linear_predictor(data, state.beta);
    gibbs_step_variable(state.factor, y_tilde, priors, src, cfg);
    update_beta(state, data, glm_cfg, src);
    accepted += latent_mh_update(state, data, glm_cfg, src);

    if (!state.theta.allFinite() || !state.beta.allFinite() || !state.factor.d.allFinite())
      throw NumericalError("non-finite latent state at scan " + std::to_string(scan));
    state.factor.check_invariants();
    acc.record(scan, state.factor);
    if (scan >= cfg.burn_in) {
      ++retained;
      response_sum += state.theta.unaryExpr([&](double t) { return inverse_link(glm_cfg.link, t); });
      beta_sum += state.beta;
      if ((scan - cfg.burn_in) % cfg.thin == 0) out.beta_samples.push_back(state.beta);
    }
  }
  out.chain = acc.finish(cfg);
  out.beta_mean = beta_sum / static_cast<double>(retained);
  out.mean_response = response_sum / static_cast<double>(retained);
  out.acceptance_rate = static_cast<double>(accepted) / (static_cast<double>(cfg.iterations) * m * n);
  if (flip) {
    out.chain.M_mean.transposeInPlace();
    out.mean_response.transposeInPlace();
  }
  return out;
}

int cv_fold(Index i, Index j, std::uint64_t seed, int folds) {
  if (folds < 1) throw ArgumentError("folds must be positive");
  const std::uint64_t h = mix64(mix64(mix64(seed) ^ static_cast<std::uint64_t>(i)) ^ static_cast<std::uint64_t>(j));
  return static_cast<int>(h % static_cast<std::uint64_t>(folds));
}

std::vector<double> cross_validate_lpp(const RelationalData& data, const std::vector<int>& ranks,
                                       int folds, const GlmConfig& glm_cfg,
                                       const PriorConfig& priors, const ChainConfig& cfg) {
  if (folds < 2) throw ArgumentError("cross-validation needs at least 2 folds");
  if (ranks.empty()) throw ArgumentError("no ranks to cross-validate");
  data.validate(glm_cfg.link);
  const Index m = data.rows();
  const Index n = data.cols();

  Eigen::ArrayXXi fold(m, n);
  std::vector<long> test_count(static_cast<std::size_t>(folds), 0);
  const long n_obs = data.observed.count();
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) {
      fold(i, j) = cv_fold(i, j, cfg.seed, folds);
      if (data.observed(i, j)) ++test_count[fold(i, j)];
    }
  }
  for (int l = 0; l < folds; ++l) {
    if (test_count[l] == 0) throw ArgumentError("cross-validation fold " + std::to_string(l + 1) + " has no test entries");
    if (test_count[l] == n_obs) throw ArgumentError("cross-validation fold " + std::to_string(l + 1) + " leaves no training entries");
  }

  std::vector<double> lpp;
  for (int k : ranks) {
    double total = 0.0;
    for (int l = 0; l < folds; ++l) {
      RelationalData train = data;
      train.observed = data.observed && (fold != l);
      ChainConfig c = cfg;
      c.fixed_rank = k;
      c.seed = mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(k) * 1000003ULL + static_cast<std::uint64_t>(l)));
      const GlmSummary fit = run_glm_chain(train, glm_cfg, priors, c);
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < m; ++i)
          if (data.observed(i, j) && fold(i, j) == l)
            total += log_predictive(glm_cfg.link, data.y(i, j), fit.mean_response(i, j));
    }
    lpp.push_back(total);
  }
  return lpp;
}

}  // namespace bsvd
