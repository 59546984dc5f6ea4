#include "bsvd/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bsvd/samplers.hpp"

namespace bsvd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kModeFloor = 1e-6;

using Index = Eigen::Index;

std::vector<Index> other_active(const FactorState& s, Index j) {
  std::vector<Index> out;
  for (Index k = 0; k < s.cols(); ++k)
    if (k != j && s.active[k]) out.push_back(k);
  return out;
}

Matrix gather(const Matrix& a, const std::vector<Index>& cols) {
  Matrix out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(c) = a.col(cols[c]);
  return out;
}

int free_count(const FactorState& s) {
  return static_cast<int>(std::count(s.pin.begin(), s.pin.end(), Pin::none));
}

void require_column(const FactorState& s, Index j) {
  if (j < 0 || j >= s.cols())
    throw ArgumentError("column index " + std::to_string(j) + " outside [0, " +
                        std::to_string(s.cols()) + ")");
}

void require_shape(const FactorState& s, const Matrix& y) {
  if (y.rows() != s.rows() || y.cols() != s.cols())
    throw ArgumentError("data " + shape_string(y.rows(), y.cols()) + " does not match state " +
                        shape_string(s.rows(), s.cols()));
}

// Singular-value prior (mean, precision) for column j.
std::pair<double, double> d_prior(const FactorState& s, Index j, const PriorConfig& priors) {
  if (s.pin[j] != Pin::none) return {0.0, 1.0 / priors.pinned_d_variance};
  return {s.mu, s.psi};
}

// The column updates below keep `resid` = Y - U D V' current.

void update_u(FactorState& s, Matrix& resid, Index j, RandomSource& src) {
  const Matrix nu = null_basis(gather(s.U, other_active(s, j)), s.rows());
  const Vector ev = resid * s.V.col(j) + s.d[j] * s.U.col(j);
  const Vector theta = s.phi * s.d[j] * (nu.transpose() * ev);
  const Vector u_new = nu * sample_vmf_any(src, theta);
  resid.noalias() += s.d[j] * (s.U.col(j) - u_new) * s.V.col(j).transpose();
  s.U.col(j) = u_new;
}

void update_v(FactorState& s, Matrix& resid, Index j, RandomSource& src) {
  const Matrix nv = null_basis(gather(s.V, other_active(s, j)), s.cols());
  const Vector eu = resid.transpose() * s.U.col(j) + s.d[j] * s.V.col(j);
  const Vector theta = s.phi * s.d[j] * (nv.transpose() * eu);
  const Vector v_new = nv * sample_vmf_any(src, theta);
  resid.noalias() += s.d[j] * s.U.col(j) * (s.V.col(j) - v_new).transpose();
  s.V.col(j) = v_new;
}

void update_d(FactorState& s, Matrix& resid, Index j, RandomSource& src, const PriorConfig& priors) {
  const auto [mu, psi] = d_prior(s, j, priors);
  const double uev = s.U.col(j).dot(resid * s.V.col(j)) + s.d[j];
  const double prec = s.phi + psi;
  const double d_new = src.normal((uev * s.phi + mu * psi) / prec, 1.0 / std::sqrt(prec));
  resid.noalias() -= (d_new - s.d[j]) * s.U.col(j) * s.V.col(j).transpose();
  s.d[j] = d_new;
}

void update_hyper(FactorState& s, double rss, double cells, const PriorConfig& p, RandomSource& src) {
  int k = 0;
  double sum_d = 0.0;
  for (Index j = 0; j < s.cols(); ++j) {
    if (s.active[j] && s.pin[j] == Pin::none) {
      ++k;
      sum_d += s.d[j];
    }
  }
  auto centered_ss = [&](double mu) {
    double ss = 0.0;
    for (Index j = 0; j < s.cols(); ++j)
      if (s.active[j] && s.pin[j] == Pin::none) ss += (s.d[j] - mu) * (s.d[j] - mu);
    return ss;
  };

  const bool hyper_fixed = p.mu_psi_fixed.has_value();
  if (p.phi_fixed) {
    s.phi = *p.phi_fixed;
  } else {
    const double shape = 0.5 * (p.nu0 + cells);
    const double rate = 0.5 * (p.nu0 * p.sigma0_sq + rss);
    if (p.mu_prior == MuPrior::detectability && !hyper_fixed) {
      // phi also enters the prior mean of mu: Metropolis step with the
      // conjugate part as proposal.
      const double prop = src.gamma(shape, rate);
      const double a_new = s.mu - p.detect_scale / std::sqrt(prop);
      const double a_old = s.mu - p.detect_scale / std::sqrt(s.phi);
      const double log_accept = -0.5 * s.psi * (a_new * a_new - a_old * a_old);
      if (std::log(src.uniform()) < log_accept) s.phi = prop;
    } else {
      s.phi = src.gamma(shape, rate);
    }
  }

  if (hyper_fixed) {
    s.mu = p.mu_psi_fixed->first;
    s.psi = p.mu_psi_fixed->second;
    return;
  }
  if (p.mu_prior == MuPrior::independent) {
    const double prec = s.psi * k + 1.0 / p.v0_sq;
    s.mu = src.normal((s.psi * sum_d + p.mu0 / p.v0_sq) / prec, 1.0 / std::sqrt(prec));
    s.psi = src.gamma(0.5 * (p.eta0 + k), 0.5 * (p.eta0 * p.tau0_sq + centered_ss(s.mu)));
  } else {
    const double center =
        p.mu_prior == MuPrior::detectability ? p.detect_scale / std::sqrt(s.phi) : p.mu0;
    s.mu = src.normal((sum_d + center) / (k + 1.0), 1.0 / std::sqrt(s.psi * (k + 1.0)));
    const double dev = s.mu - center;
    s.psi = src.gamma(0.5 * (p.eta0 + k + 1.0),
                      0.5 * (p.eta0 * p.tau0_sq + centered_ss(s.mu) + dev * dev));
  }
}

ActivationOdds activation_odds(const FactorState& s, const Matrix& e_minus_j, Index j,
                               const PriorConfig& priors, double rel_tol, int max_order) {
  ActivationOdds out;
  const std::vector<Index> others = other_active(s, j);
  int k_minus_free = 0;
  for (Index k : others)
    if (s.pin[k] == Pin::none) ++k_minus_free;

  out.log_prior_odds = log_conditional_prior_odds_active(priors.rank_prior, k_minus_free, free_count(s));
  out.nu = null_basis(gather(s.U, others), s.rows());
  out.nv = null_basis(gather(s.V, others), s.cols());
  out.e_tilde = out.nu.transpose() * e_minus_j * out.nv;
  out.e_norm_sq = out.e_tilde.squaredNorm();
  if (out.log_prior_odds == -kInf) {
    out.log_odds = -kInf;
    return out;
  }
  const Vector lambda = gram_eigenvalues(out.e_tilde);
  out.coeffs = bilinear_series_coeffs(lambda, static_cast<int>(out.e_tilde.rows()),
                                      static_cast<int>(out.e_tilde.cols()), s.phi, s.mu, s.psi,
                                      SeriesOptions{rel_tol, max_order});
  out.log_bayes_factor = out.coeffs.log_weight_sum();
  out.log_odds = out.log_prior_odds + out.log_bayes_factor;
  return out;
}

void activation_step(FactorState& s, Matrix& resid, Index j, const PriorConfig& priors,
                     RandomSource& src, const ChainConfig& cfg) {
  Matrix e_minus_j = resid;
  if (s.active[j]) e_minus_j.noalias() += s.d[j] * s.U.col(j) * s.V.col(j).transpose();
  const ActivationOdds odds =
      activation_odds(s, e_minus_j, j, priors, cfg.series_rel_tol, cfg.series_max_order);

  if (src.uniform() < odds.probability_active()) {
    const double d = sample_d_mixture(src, odds.coeffs, odds.e_norm_sq, s.phi, s.mu, s.psi);
    const UnitPair uv = sample_joint_uv(src, s.phi * d * odds.e_tilde, cfg.gibbs_refinements);
    s.U.col(j) = odds.nu * uv.u;
    s.V.col(j) = odds.nv * uv.v;
    s.d[j] = d;
    s.active[j] = 1;
    resid = e_minus_j;
    resid.noalias() -= d * s.U.col(j) * s.V.col(j).transpose();
  } else {
    s.deactivate(j);
    resid = std::move(e_minus_j);
  }
}

std::vector<Index> scan_order(Index n, bool shuffle, RandomSource& src) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (shuffle) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto k = static_cast<std::size_t>(src.uniform() * i);
      std::swap(order[i - 1], order[std::min(k, i - 1)]);
    }
  }
  return order;
}

bool state_finite(const FactorState& s) {
  return s.U.allFinite() && s.V.allFinite() && s.d.allFinite() && std::isfinite(s.phi) &&
         std::isfinite(s.mu) && std::isfinite(s.psi) && s.phi > 0.0 && s.psi > 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// FactorState

FactorState FactorState::empty(Index m, Index n) {
  if (m < 1 || n < 1 || m < n)
    throw ArgumentError("factor state requires m >= n >= 1, got " + shape_string(m, n));
  FactorState s;
  s.U = Matrix::Zero(m, n);
  s.V = Matrix::Zero(n, n);
  s.d = Vector::Zero(n);
  s.active.assign(static_cast<std::size_t>(n), 0);
  s.pin.assign(static_cast<std::size_t>(n), Pin::none);
  return s;
}

int FactorState::rank() const {
  int k = 0;
  for (std::size_t j = 0; j < active.size(); ++j)
    if (active[j] && pin[j] == Pin::none) ++k;
  return k;
}

int FactorState::active_count() const {
  return static_cast<int>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

int FactorState::pinned_count() const { return static_cast<int>(pin.size()) - free_count(*this); }

Matrix FactorState::mean() const { return U * d.asDiagonal() * V.transpose(); }

void FactorState::deactivate(Index j) {
  if (pin[j] != Pin::none) throw ContractError("pinned column " + std::to_string(j) + " cannot be deactivated");
  active[j] = 0;
  d[j] = 0.0;
  U.col(j).setZero();
  V.col(j).setZero();
}

void FactorState::check_invariants(double tol) const {
  const Index n = cols();
  if (U.cols() != n || d.size() != n || static_cast<Index>(active.size()) != n ||
      static_cast<Index>(pin.size()) != n)
    throw ContractError("factor state has inconsistent dimensions");
  std::vector<Index> on;
  for (Index j = 0; j < n; ++j) {
    if (active[j]) {
      on.push_back(j);
    } else {
      if (pin[j] != Pin::none) throw ContractError("pinned column " + std::to_string(j) + " is inactive");
      if (d[j] != 0.0 || !U.col(j).isZero(0.0) || !V.col(j).isZero(0.0))
        throw ContractError("inactive column " + std::to_string(j) + " is not identically zero");
    }
  }
  if (on.empty()) return;
  const double eu = orthonormality_error(gather(U, on));
  const double ev = orthonormality_error(gather(V, on));
  if (eu > tol || ev > tol)
    throw ContractError("active columns lost orthonormality (U " + std::to_string(eu) + ", V " +
                        std::to_string(ev) + ")");
}

FactorState FactorState::transposed() const {
  FactorState t;
  t.U = V;
  t.V = U;
  t.d = d;
  t.active = active;
  t.pin = pin;
  for (Pin& p : t.pin) {
    if (p == Pin::left)
      p = Pin::right;
    else if (p == Pin::right)
      p = Pin::left;
  }
  t.phi = phi;
  t.mu = mu;
  t.psi = psi;
  return t;
}

// ---------------------------------------------------------------------------
// Priors

void PriorConfig::validate(int n_free) const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw ArgumentError(std::string("prior ") + name + " must be positive and finite");
  };
  positive(v0_sq, "v0_sq");
  positive(eta0, "eta0");
  positive(tau0_sq, "tau0_sq");
  positive(nu0, "nu0");
  positive(sigma0_sq, "sigma0_sq");
  positive(pinned_d_variance, "pinned_d_variance");
  if (!std::isfinite(mu0)) throw ArgumentError("prior mu0 must be finite");
  if (phi_fixed) positive(*phi_fixed, "phi_fixed");
  if (mu_psi_fixed) {
    if (!std::isfinite(mu_psi_fixed->first)) throw ArgumentError("fixed mu must be finite");
    positive(mu_psi_fixed->second, "fixed psi");
  }
  if (mu_prior == MuPrior::detectability && !(detect_scale >= 0.0))
    throw ArgumentError("detectability prior scale must be nonnegative");
  if (rank_prior.size() > 0) {
    if (rank_prior.size() != n_free + 1)
      throw ArgumentError("rank prior has " + std::to_string(rank_prior.size()) +
                          " entries, expected " + std::to_string(n_free + 1));
    if (!rank_prior.allFinite() || (rank_prior.array() < 0.0).any())
      throw ArgumentError("rank prior entries must be finite and nonnegative");
    if (std::abs(rank_prior.sum() - 1.0) > 1e-12)
      throw ArgumentError("rank prior must sum to 1");
  }
}

double PriorConfig::rank_prior_at(int k, int n_free) const {
  if (k < 0 || k > n_free) return 0.0;
  if (rank_prior.size() == 0) return 1.0 / (n_free + 1.0);
  return rank_prior[k];
}

EmpiricalBayes empirical_bayes_hyperparams(const Matrix& y) {
  require_finite(y, "empirical-Bayes input");
  if (y.rows() < 1 || y.cols() < 1) throw ArgumentError("empirical-Bayes input is empty");
  const Matrix t = y.rows() >= y.cols() ? y : Matrix(y.transpose());
  const Index m = t.rows();
  const Index n = t.cols();
  const Vector dh = svd(t).d;
  const double cells = static_cast<double>(m * n);

  Vector sig(n + 1), mu(n + 1), tau(n + 1);
  for (Index k = 0; k <= n; ++k) {
    sig[k] = dh.tail(n - k).squaredNorm() / cells;
    if (k == 0) {
      mu[k] = 0.0;
      tau[k] = 0.0;
    } else {
      const Vector head = dh.head(k);
      mu[k] = head.mean();
      tau[k] = (head.array() - mu[k]).square().sum() / k;
    }
  }
  EmpiricalBayes out;
  out.sigma0_sq = sig.mean();
  out.mu0 = mu.mean();
  out.v0_sq = (mu.array() - out.mu0).square().sum() / n;
  out.tau0_sq = tau.mean();

  const double meansq = y.squaredNorm() / cells;
  const double floor = meansq > 0.0 ? 1e-8 * meansq : 1e-8;
  for (double* v : {&out.sigma0_sq, &out.v0_sq, &out.tau0_sq}) {
    if (*v < floor) {
      *v = floor;
      out.floored = true;
    }
  }
  return out;
}

PriorConfig empirical_bayes_prior(const Matrix& y) {
  const EmpiricalBayes eb = empirical_bayes_hyperparams(y);
  PriorConfig p;
  p.nu0 = 2.0;
  p.eta0 = 2.0;
  p.sigma0_sq = eb.sigma0_sq;
  p.mu0 = eb.mu0;
  p.v0_sq = eb.v0_sq;
  p.tau0_sq = eb.tau0_sq;
  return p;
}

PriorConfig diffuse_prior() {
  PriorConfig p;
  p.nu0 = 2.0;
  p.sigma0_sq = 1.0;
  p.eta0 = 2.0;
  p.tau0_sq = 1.0;
  p.mu0 = 0.0;
  p.mu_prior = MuPrior::scaled_by_psi;
  return p;
}

PriorConfig detectability_prior(Index m, Index n) {
  PriorConfig p = diffuse_prior();
  const double dm = static_cast<double>(m);
  const double dn = static_cast<double>(n);
  p.mu_prior = MuPrior::detectability;
  p.detect_scale = std::sqrt(dn + dm + 2.0 * std::sqrt(dn * dm));
  return p;
}

void ChainConfig::validate() const {
  if (iterations < 1) throw ArgumentError("iterations must be positive");
  if (burn_in < 0 || burn_in >= iterations) throw ArgumentError("burn-in must satisfy 0 <= burn_in < iterations");
  if (thin < 1) throw ArgumentError("thin must be at least 1");
  if (gibbs_refinements < 0) throw ArgumentError("gibbs_refinements must be nonnegative");
  if (!(series_rel_tol > 0.0)) throw ArgumentError("series_rel_tol must be positive");
  if (series_max_order < 2) throw ArgumentError("series_max_order must be at least 2");
  if (fixed_rank && *fixed_rank < 0) throw ArgumentError("fixed rank must be nonnegative");
  if (!(geweke_first > 0.0) || !(geweke_last > 0.0) || geweke_first + geweke_last > 1.0)
    throw ArgumentError("Geweke fractions must be positive and sum to at most 1");
}

// ---------------------------------------------------------------------------
// Summaries

Vector ChainSummary::rank_posterior() const {
  Vector p(static_cast<Index>(rank_histogram.size()));
  for (std::size_t k = 0; k < rank_histogram.size(); ++k) p[k] = static_cast<double>(rank_histogram[k]);
  const double total = p.sum();
  return total > 0.0 ? Vector(p / total) : p;
}

int ChainSummary::posterior_mode_rank() const {
  if (rank_histogram.empty()) return 0;
  return static_cast<int>(std::max_element(rank_histogram.begin(), rank_histogram.end()) -
                          rank_histogram.begin());
}

ChainAccumulator::ChainAccumulator(Index m, Index n, int n_free, const ChainConfig& cfg)
    : burn_in_(cfg.burn_in), thin_(cfg.thin), m_sum_(Matrix::Zero(m, n)) {
  summary_.rank_histogram.assign(static_cast<std::size_t>(n_free) + 1, 0);
}

void ChainAccumulator::record(long scan, const FactorState& state) {
  if (scan < burn_in_) return;
  ++summary_.retained_scans;
  ++summary_.rank_histogram[state.rank()];
  m_sum_.noalias() += state.mean();
  if ((scan - burn_in_) % thin_ == 0)
    summary_.samples.push_back({scan, state.rank(), state.phi, state.mu, state.psi, state.d});
}

ChainSummary ChainAccumulator::finish(const ChainConfig& cfg) const {
  ChainSummary out = summary_;
  out.M_mean = summary_.retained_scans > 0 ? Matrix(m_sum_ / summary_.retained_scans) : m_sum_;
  std::vector<double> phi, mu, psi, k;
  for (const ScanSample& s : out.samples) {
    phi.push_back(s.phi);
    mu.push_back(s.mu);
    psi.push_back(s.psi);
    k.push_back(s.rank);
  }
  out.diagnostics["phi"] = diagnose(phi, cfg.geweke_first, cfg.geweke_last);
  out.diagnostics["mu"] = diagnose(mu, cfg.geweke_first, cfg.geweke_last);
  out.diagnostics["psi"] = diagnose(psi, cfg.geweke_first, cfg.geweke_last);
  out.diagnostics["K"] = diagnose(k, cfg.geweke_first, cfg.geweke_last);
  return out;
}

// ---------------------------------------------------------------------------
// Conditional updates

void sample_u_column(FactorState& state, const Matrix& y, Index j, RandomSource& src) {
  require_shape(state, y);
  require_column(state, j);
  if (!state.active[j]) throw ArgumentError("sample_u_column on inactive column " + std::to_string(j));
  Matrix resid = y - state.mean();
  update_u(state, resid, j, src);
}

void sample_v_column(FactorState& state, const Matrix& y, Index j, RandomSource& src) {
  require_shape(state, y);
  require_column(state, j);
  if (!state.active[j]) throw ArgumentError("sample_v_column on inactive column " + std::to_string(j));
  Matrix resid = y - state.mean();
  update_v(state, resid, j, src);
}

void sample_d_fixed(FactorState& state, const Matrix& y, Index j, RandomSource& src,
                    const PriorConfig& priors) {
  require_shape(state, y);
  require_column(state, j);
  if (!state.active[j]) throw ArgumentError("sample_d_fixed on inactive column " + std::to_string(j));
  Matrix resid = y - state.mean();
  update_d(state, resid, j, src, priors);
}

void sample_phi_mu_psi(FactorState& state, const Matrix& y, const PriorConfig& priors,
                       RandomSource& src) {
  require_shape(state, y);
  update_hyper(state, (y - state.mean()).squaredNorm(), static_cast<double>(y.size()), priors, src);
}

double log_conditional_prior_odds_active(const Vector& rank_prior, int k_minus, int n_free) {
  if (n_free < 1 || k_minus < 0 || k_minus > n_free - 1)
    throw ArgumentError("prior odds need 0 <= k_minus <= n_free - 1 (k_minus " +
                        std::to_string(k_minus) + ", n_free " + std::to_string(n_free) + ")");
  PriorConfig p;
  p.rank_prior = rank_prior;
  if (rank_prior.size() > 0 && rank_prior.size() != n_free + 1)
    throw ArgumentError("rank prior has " + std::to_string(rank_prior.size()) +
                        " entries, expected " + std::to_string(n_free + 1));
  const double lo = p.rank_prior_at(k_minus, n_free);
  const double hi = p.rank_prior_at(k_minus + 1, n_free);
  if (lo == 0.0 && hi == 0.0)
    throw ArgumentError("rank prior is zero at both K=" + std::to_string(k_minus) + " and K=" +
                        std::to_string(k_minus + 1) + "; activation odds undefined");
  if (hi == 0.0) return -kInf;
  if (lo == 0.0) return kInf;
  // C(n,k)/C(n,k+1) = (k+1)/(n-k)
  return std::log(hi) - std::log(lo) + std::log(k_minus + 1.0) - std::log(n_free - k_minus);
}

double conditional_prior_odds_active(const Vector& rank_prior, int k_minus, int n_free) {
  return std::exp(log_conditional_prior_odds_active(rank_prior, k_minus, n_free));
}

double ActivationOdds::probability_active() const {
  if (log_odds == kInf) return 1.0;
  if (log_odds == -kInf) return 0.0;
  return log_odds >= 0.0 ? 1.0 / (1.0 + std::exp(-log_odds))
                         : std::exp(log_odds) / (1.0 + std::exp(log_odds));
}

ActivationOdds odds_dj_nonzero(const FactorState& state, const Matrix& y, Index j,
                               const PriorConfig& priors, double series_rel_tol,
                               int series_max_order) {
  require_shape(state, y);
  require_column(state, j);
  if (state.pin[j] != Pin::none) throw ArgumentError("pinned column " + std::to_string(j) + " has no activation odds");
  Matrix e_minus_j = y - state.mean();
  if (state.active[j]) e_minus_j.noalias() += state.d[j] * state.U.col(j) * state.V.col(j).transpose();
  return activation_odds(state, e_minus_j, j, priors, series_rel_tol, series_max_order);
}

void gibbs_step_variable(FactorState& state, const Matrix& y, const PriorConfig& priors,
                         RandomSource& src, const ChainConfig& cfg) {
  require_shape(state, y);
  Matrix resid = y - state.mean();

  // A: activation and joint redraw of each free column.
  if (!cfg.fixed_rank) {
    for (Index j : scan_order(state.cols(), cfg.random_scan_order, src))
      if (state.pin[j] == Pin::none) activation_step(state, resid, j, priors, src, cfg);
  }

  // B: fixed-dimension conditionals of the active columns.
  for (Index j : scan_order(state.cols(), cfg.random_scan_order, src)) {
    if (!state.active[j]) continue;
    if (state.pin[j] != Pin::left) update_u(state, resid, j, src);
    if (state.pin[j] != Pin::right) update_v(state, resid, j, src);
    update_d(state, resid, j, src, priors);
  }

  // C: precision and singular-value hyperparameters.
  resid = y - state.mean();
  update_hyper(state, resid.squaredNorm(), static_cast<double>(y.size()), priors, src);
}

void set_prior_modes(FactorState& state, const PriorConfig& p) {
  state.phi = p.phi_fixed ? *p.phi_fixed
                          : std::max((0.5 * p.nu0 - 1.0) / (0.5 * p.nu0 * p.sigma0_sq), kModeFloor);
  if (p.mu_psi_fixed) {
    state.mu = p.mu_psi_fixed->first;
    state.psi = p.mu_psi_fixed->second;
    return;
  }
  state.psi = std::max((0.5 * p.eta0 - 1.0) / (0.5 * p.eta0 * p.tau0_sq), kModeFloor);
  state.mu = p.mu_prior == MuPrior::detectability ? p.detect_scale / std::sqrt(state.phi) : p.mu0;
}

void init_from_svd(FactorState& state, const Matrix& y, int k) {
  require_shape(state, y);
  std::vector<Index> free_inactive;
  std::vector<Index> pinned;
  for (Index j = 0; j < state.cols(); ++j) {
    if (state.pin[j] != Pin::none) pinned.push_back(j);
    else if (!state.active[j]) free_inactive.push_back(j);
  }
  if (k < 0 || k > static_cast<int>(free_inactive.size()))
    throw ArgumentError("cannot initialize " + std::to_string(k) + " columns; " +
                        std::to_string(free_inactive.size()) + " free columns available");
  if (k == 0) return;
  std::vector<Index> on;
  for (Index j = 0; j < state.cols(); ++j)
    if (state.active[j]) on.push_back(j);
  const Matrix nu = null_basis(gather(state.U, on), state.rows());
  const Matrix nv = null_basis(gather(state.V, on), state.cols());
  const Matrix resid = y - state.mean();
  const SvdTriple<double> f = svd(Matrix(nu.transpose() * resid * nv));
  for (int c = 0; c < k; ++c) {
    const Index j = free_inactive[c];
    state.U.col(j) = nu * f.U.col(c);
    state.V.col(j) = nv * f.V.col(c);
    state.d[j] = f.d[c] > 0.0 ? f.d[c] : 1e-8;
    state.active[j] = 1;
  }
}

ChainSummary run_chain(const Matrix& y_in, const std::optional<Mask>& observed_in,
                       const PriorConfig& priors, const ChainConfig& cfg) {
  cfg.validate();
  require_finite(y_in, "data matrix");
  if (y_in.rows() < 1 || y_in.cols() < 1) throw ArgumentError("data matrix is empty");
  const bool flip = y_in.rows() < y_in.cols();
  Matrix y = flip ? Matrix(y_in.transpose()) : y_in;
  std::optional<Mask> observed;
  if (observed_in) {
    if (observed_in->rows() != y_in.rows() || observed_in->cols() != y_in.cols())
      throw ArgumentError("mask shape does not match data");
    observed = flip ? Mask(observed_in->transpose()) : *observed_in;
  }
  const Index m = y.rows();
  const Index n = y.cols();

  bool any_missing = false;
  if (observed) {
    const Index n_obs = observed->count();
    if (n_obs < 1) throw ArgumentError("no observed entries");
    any_missing = n_obs < y.size();
    double sum = 0.0;
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < m; ++i)
        if ((*observed)(i, j)) sum += y(i, j);
    const double fill = sum / n_obs;
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < m; ++i)
        if (!(*observed)(i, j)) y(i, j) = fill;
  }

  priors.validate(static_cast<int>(n));
  if (cfg.fixed_rank && *cfg.fixed_rank > n)
    throw ArgumentError("fixed rank " + std::to_string(*cfg.fixed_rank) + " exceeds " + std::to_string(n));

  FactorState state = FactorState::empty(m, n);
  set_prior_modes(state, priors);
  if (cfg.fixed_rank) init_from_svd(state, y, *cfg.fixed_rank);

  RandomSource src(cfg.seed);
  ChainAccumulator acc(m, n, static_cast<int>(n), cfg);
  for (long scan = 0; scan < cfg.iterations; ++scan) {
    // Imputation waits one scan so that phi has left its prior mode.
    if (any_missing && scan > 0) {
      const Matrix mean = state.mean();
      const double sd = 1.0 / std::sqrt(state.phi);
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < m; ++i)
          if (!(*observed)(i, j)) y(i, j) = mean(i, j) + sd * src.normal();
    }
    gibbs_step_variable(state, y, priors, src, cfg);
    if (!state_finite(state))
      throw NumericalError("non-finite sampler state at scan " + std::to_string(scan));
    state.check_invariants();
    acc.record(scan, state);
  }
  ChainSummary out = acc.finish(cfg);
  if (flip) out.M_mean.transposeInPlace();
  return out;
}

}  // namespace bsvd
