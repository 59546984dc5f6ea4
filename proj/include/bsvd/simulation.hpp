#pragma once

// Simulation study: synthetic low-rank data near the detection threshold,
// batch chains and the summary statistics of the study tables.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bsvd/gibbs.hpp"

namespace bsvd {

enum class PriorPreset { empirical_bayes, diffuse, detectability };

PriorPreset parse_prior_preset(const std::string& name);
std::string to_string(PriorPreset p);
PriorConfig make_prior(PriorPreset preset, const Matrix& y);

struct SimDesign {
  Eigen::Index m = 10;
  Eigen::Index n = 10;
  int true_rank = 5;
  std::vector<std::uint64_t> seeds;  // one dataset per seed
  ChainConfig chain;
  PriorPreset prior = PriorPreset::empirical_bayes;
  int workers = 1;

  /// Seeds 1..count.
  static std::vector<std::uint64_t> default_seeds(int count);
  void validate() const;
};

/// sqrt(n + m + 2 sqrt(nm)), roughly the largest singular value of an m x n
/// standard normal matrix.
double detection_scale(Eigen::Index m, Eigen::Index n);

struct Dataset {
  Matrix Y;
  Matrix M_true;
  Matrix U;
  Vector d;
  Matrix V;
};

/// U, V uniform with orthonormal columns, d_k ~ uniform(s/2, 3s/2) with
/// s = detection_scale(m, n), Y = U diag(d) V' + standard normal noise.
Dataset generate_dataset(const SimDesign& design, std::uint64_t seed);

struct DatasetRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  int k_hat = 0;
  int k_hat_e = 0;
  int k_hat_c = 0;
  std::vector<double> rank_posterior;
  double ase_bayes = 0.0;
  double ase_ls = 0.0;
  std::optional<double> phi_geweke_z;
  std::optional<double> phi_ess;
  bool success = false;
};

struct StudyAggregate {
  int true_rank = 0;
  std::size_t datasets = 0;
  std::size_t failed = 0;
  std::vector<double> mean_rank_posterior;
  std::vector<long> k_hat_counts;
  std::vector<long> k_hat_e_counts;
  std::vector<long> k_hat_c_counts;
  double pr_correct = 0.0;
  double pr_correct_e = 0.0;
  double pr_correct_c = 0.0;
  int k_hat_mode = 0;
  int k_hat_e_mode = 0;
  int k_hat_c_mode = 0;
  std::vector<double> ase_ratios;
  double median_ase_ratio = 0.0;
  double frac_ase_ratio_below_one = 0.0;
  double success_rate = 0.0;
};

struct StudyReport {
  std::vector<DatasetRecord> records;
  StudyAggregate aggregate;
};

/// Runs one chain per dataset. Chain failures are recorded, not thrown.
/// `on_record` is called in dataset order as records complete.
StudyReport run_study(const SimDesign& design,
                      const std::function<void(const DatasetRecord&)>& on_record = {});

DatasetRecord evaluate_dataset(const SimDesign& design, std::size_t index);

/// Pure reduction of per-dataset records.
StudyAggregate aggregate_records(const std::vector<DatasetRecord>& records, int true_rank,
                                 Eigen::Index n, const SuccessCriterion& success = {});

std::string record_to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const std::string& line);
std::string aggregate_to_json(const StudyAggregate& a);

}  // namespace bsvd
