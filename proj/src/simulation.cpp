#include "bsvd/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "bsvd/diagnostics.hpp"
#include "bsvd/samplers.hpp"

namespace bsvd {

using json = nlohmann::json;

PriorPreset parse_prior_preset(const std::string& name) {
  if (name == "empirical-bayes") return PriorPreset::empirical_bayes;
  if (name == "diffuse") return PriorPreset::diffuse;
  if (name == "detectability") return PriorPreset::detectability;
  throw ArgumentError("unknown prior preset '" + name +
                      "' (expected empirical-bayes, diffuse or detectability)");
}

std::string to_string(PriorPreset p) {
  switch (p) {
    case PriorPreset::empirical_bayes: return "empirical-bayes";
    case PriorPreset::diffuse: return "diffuse";
    case PriorPreset::detectability: return "detectability";
  }
  return "empirical-bayes";
}

PriorConfig make_prior(PriorPreset preset, const Matrix& y) {
  switch (preset) {
    case PriorPreset::empirical_bayes: return empirical_bayes_prior(y);
    case PriorPreset::diffuse: return diffuse_prior();
    case PriorPreset::detectability: return detectability_prior(y.rows(), y.cols());
  }
  return empirical_bayes_prior(y);
}

std::vector<std::uint64_t> SimDesign::default_seeds(int count) {
  std::vector<std::uint64_t> s;
  for (int i = 1; i <= count; ++i) s.push_back(static_cast<std::uint64_t>(i));
  return s;
}

void SimDesign::validate() const {
  if (n < 1 || m < 1) throw ArgumentError("design dimensions must be positive");
  if (true_rank < 0 || true_rank > std::min(m, n))
    throw ArgumentError("true rank " + std::to_string(true_rank) + " outside [0, min(m, n)]");
  if (seeds.empty()) throw ArgumentError("design has no seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ArgumentError("design seeds must be distinct");
  if (workers < 1) throw ArgumentError("workers must be at least 1");
  chain.validate();
}

double detection_scale(Eigen::Index m, Eigen::Index n) {
  const double dm = static_cast<double>(m);
  const double dn = static_cast<double>(n);
  return std::sqrt(dn + dm + 2.0 * std::sqrt(dn * dm));
}

Dataset generate_dataset(const SimDesign& design, std::uint64_t seed) {
  const Eigen::Index m = design.m;
  const Eigen::Index n = design.n;
  const int k = design.true_rank;
  if (k < 0 || k > std::min(m, n)) throw ArgumentError("true rank outside [0, min(m, n)]");
  RandomSource src(seed);
  Dataset out;
  out.M_true = Matrix::Zero(m, n);
  out.U = Matrix::Zero(m, k);
  out.V = Matrix::Zero(n, k);
  out.d = Vector::Zero(k);
  if (k > 0) {
    out.U = sample_stiefel_sequential(src, m, k);
    out.V = sample_stiefel_sequential(src, n, k);
    const double s = detection_scale(m, n);
    for (int j = 0; j < k; ++j) out.d[j] = 0.5 * s + s * src.uniform();
    out.M_true = out.U * out.d.asDiagonal() * out.V.transpose();
  }
  out.Y = out.M_true + src.normal_matrix(m, n);
  return out;
}

DatasetRecord evaluate_dataset(const SimDesign& design, std::size_t index) {
  DatasetRecord rec;
  rec.index = index;
  rec.seed = design.seeds.at(index);
  try {
    const Dataset data = generate_dataset(design, rec.seed);
    ChainConfig cfg = design.chain;
    cfg.seed = mix64(rec.seed ^ design.chain.seed);
    const ChainSummary summary =
        run_chain(data.Y, std::nullopt, make_prior(design.prior, data.Y), cfg);

    rec.k_hat = summary.posterior_mode_rank();
    const Vector post = summary.rank_posterior();
    rec.rank_posterior.assign(post.data(), post.data() + post.size());
    rec.ase_bayes = ase(summary.M_mean, data.M_true);
    rec.ase_ls = ase(rank_k_projection(data.Y, rec.k_hat), data.M_true);
    if (data.Y.cols() >= 2) {
      const RankBaselines b = rank_baselines(data.Y);
      rec.k_hat_e = b.k_hat_e;
      rec.k_hat_c = b.k_hat_c;
    }
    const auto it = summary.diagnostics.find("phi");
    if (it != summary.diagnostics.end()) {
      rec.phi_geweke_z = it->second.geweke_z;
      rec.phi_ess = it->second.ess;
      rec.success = mcmc_success(it->second);
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

StudyReport run_study(const SimDesign& design,
                      const std::function<void(const DatasetRecord&)>& on_record) {
  design.validate();
  const std::size_t count = design.seeds.size();
  StudyReport report;
  report.records.resize(count);
  std::vector<bool> done(count, false);
  std::size_t next_emit = 0;
  std::mutex lock;
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      DatasetRecord rec = evaluate_dataset(design, i);
      std::lock_guard<std::mutex> guard(lock);
      report.records[i] = std::move(rec);
      done[i] = true;
      while (next_emit < count && done[next_emit]) {
        if (on_record) on_record(report.records[next_emit]);
        ++next_emit;
      }
    }
  };

  const int workers = std::min<int>(design.workers, static_cast<int>(count));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  report.aggregate = aggregate_records(report.records, design.true_rank,
                                       std::min(design.m, design.n));
  return report;
}

namespace {

int mode_of(const std::vector<long>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

StudyAggregate aggregate_records(const std::vector<DatasetRecord>& records, int true_rank,
                                 Eigen::Index n, const SuccessCriterion& success) {
  StudyAggregate a;
  a.true_rank = true_rank;
  a.datasets = records.size();
  const std::size_t bins = static_cast<std::size_t>(n) + 1;
  a.mean_rank_posterior.assign(bins, 0.0);
  a.k_hat_counts.assign(bins, 0);
  a.k_hat_e_counts.assign(bins, 0);
  a.k_hat_c_counts.assign(bins, 0);

  std::size_t ok = 0;
  std::size_t hits = 0, hits_e = 0, hits_c = 0, succ = 0;
  for (const DatasetRecord& r : records) {
    if (!r.ok) {
      ++a.failed;
      continue;
    }
    ++ok;
    for (std::size_t k = 0; k < std::min(bins, r.rank_posterior.size()); ++k)
      a.mean_rank_posterior[k] += r.rank_posterior[k];
    auto bump = [&](std::vector<long>& c, int k) {
      if (k >= 0 && static_cast<std::size_t>(k) < bins) ++c[k];
    };
    bump(a.k_hat_counts, r.k_hat);
    bump(a.k_hat_e_counts, r.k_hat_e);
    bump(a.k_hat_c_counts, r.k_hat_c);
    hits += r.k_hat == true_rank;
    hits_e += r.k_hat_e == true_rank;
    hits_c += r.k_hat_c == true_rank;
    a.ase_ratios.push_back(r.ase_ls > 0.0 ? r.ase_bayes / r.ase_ls
                                          : std::numeric_limits<double>::infinity());
    ScalarDiagnostics d{r.phi_geweke_z, r.phi_ess};
    succ += mcmc_success(d, success);
  }
  if (ok == 0) return a;
  const double denom = static_cast<double>(ok);
  for (double& p : a.mean_rank_posterior) p /= denom;
  a.pr_correct = hits / denom;
  a.pr_correct_e = hits_e / denom;
  a.pr_correct_c = hits_c / denom;
  a.k_hat_mode = mode_of(a.k_hat_counts);
  a.k_hat_e_mode = mode_of(a.k_hat_e_counts);
  a.k_hat_c_mode = mode_of(a.k_hat_c_counts);
  std::vector<double> sorted = a.ase_ratios;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t h = sorted.size() / 2;
  a.median_ase_ratio = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
  a.frac_ase_ratio_below_one =
      std::count_if(sorted.begin(), sorted.end(), [](double x) { return x < 1.0; }) / denom;
  a.success_rate = succ / denom;
  return a;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string record_to_json(const DatasetRecord& r) {
  json j;
  j["index"] = r.index;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  j["k_hat"] = r.k_hat;
  j["k_hat_e"] = r.k_hat_e;
  j["k_hat_c"] = r.k_hat_c;
  j["rank_posterior"] = r.rank_posterior;
  j["ase_bayes"] = r.ase_bayes;
  j["ase_ls"] = r.ase_ls;
  j["phi_geweke_z"] = optional_json(r.phi_geweke_z);
  j["phi_ess"] = optional_json(r.phi_ess);
  j["success"] = r.success;
  return j.dump();
}

DatasetRecord record_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("malformed dataset record: ") + e.what());
  }
  DatasetRecord r;
  r.index = j.at("index").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.value("error", std::string());
  r.k_hat = j.at("k_hat").get<int>();
  r.k_hat_e = j.at("k_hat_e").get<int>();
  r.k_hat_c = j.at("k_hat_c").get<int>();
  r.rank_posterior = j.at("rank_posterior").get<std::vector<double>>();
  r.ase_bayes = j.at("ase_bayes").get<double>();
  r.ase_ls = j.at("ase_ls").get<double>();
  r.phi_geweke_z = optional_from(j.at("phi_geweke_z"));
  r.phi_ess = optional_from(j.at("phi_ess"));
  r.success = j.at("success").get<bool>();
  return r;
}

std::string aggregate_to_json(const StudyAggregate& a) {
  json j;
  j["true_rank"] = a.true_rank;
  j["datasets"] = a.datasets;
  j["failed"] = a.failed;
  j["mean_rank_posterior"] = a.mean_rank_posterior;
  j["k_hat_counts"] = a.k_hat_counts;
  j["k_hat_e_counts"] = a.k_hat_e_counts;
  j["k_hat_c_counts"] = a.k_hat_c_counts;
  j["pr_correct"] = a.pr_correct;
  j["pr_correct_e"] = a.pr_correct_e;
  j["pr_correct_c"] = a.pr_correct_c;
  j["k_hat_mode"] = a.k_hat_mode;
  j["k_hat_e_mode"] = a.k_hat_e_mode;
  j["k_hat_c_mode"] = a.k_hat_c_mode;
  j["ase_ratios"] = a.ase_ratios;
  j["median_ase_ratio"] = a.median_ase_ratio;
  j["frac_ase_ratio_below_one"] = a.frac_ase_ratio_below_one;
  j["success_rate"] = a.success_rate;
  return j.dump(2);
}

}  // namespace bsvd
