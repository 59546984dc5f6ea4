#include "bsvd/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bsvd/diagnostics.hpp"
#include "bsvd/glm.hpp"
#include "bsvd/io.hpp"
#include "bsvd/simulation.hpp"

#ifndef BSVD_VERSION
#define BSVD_VERSION "0.0.0"
#endif

namespace bsvd {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ChainFlags {
  long iterations = 2000;
  long burn_in = 1000;
  long thin = 10;
  int refinements = 5;
  double series_tol = 1e-10;
  int max_order = 5000;
  bool random_scan = false;
  int fixed_rank = -1;
};

struct GlmFlags {
  std::string link = "logit";
  bool no_row_effect = false;
  bool no_col_effect = false;
  double beta_variance = 100.0;
  double d_variance = 100.0;
  std::vector<std::string> covariates;
};

struct Flags {
  std::uint64_t seed = 0;
  std::string input;
  std::string output = "bsvd-out";
  std::string missing = "NA";
  std::string prior = "empirical-bayes";
  ChainFlags chain;
  GlmFlags glm;
  long m = 10;
  long n = 10;
  int rank = 5;
  int datasets = 20;
  int workers = 1;
  std::vector<int> ranks{0, 1, 2, 3, 4};
  int folds = 10;
  std::string manifest;
};

void add_chain_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("--iterations", f.chain.iterations, "Gibbs scans")->check(CLI::PositiveNumber);
  cmd->add_option("--burn-in", f.chain.burn_in, "Scans discarded before recording")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--thin", f.chain.thin, "Keep every thin-th retained scan as a sample")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--refinements", f.chain.refinements, "Conditional vMF steps in the joint (u,v) draw")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--series-tol", f.chain.series_tol, "Relative truncation tolerance of the series")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--max-order", f.chain.max_order, "Series order cap")->check(CLI::PositiveNumber);
  cmd->add_flag("--random-scan", f.chain.random_scan, "Visit columns in random order");
  cmd->add_option("--fixed-rank", f.chain.fixed_rank, "Hold the rank fixed")
      ->check(CLI::NonNegativeNumber);
}

void add_glm_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("--link", f.glm.link, "logit or log")->check(CLI::IsMember({"logit", "log"}));
  cmd->add_flag("--no-row-effect", f.glm.no_row_effect, "Drop the fixed 1/sqrt(m) column of U");
  cmd->add_flag("--no-col-effect", f.glm.no_col_effect, "Drop the fixed 1/sqrt(n) column of V");
  cmd->add_option("--beta-variance", f.glm.beta_variance, "Prior variance of regression coefficients")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--d-variance", f.glm.d_variance, "Prior variance of singular values")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--covariate", f.glm.covariates, "Covariate matrix file (repeatable)")
      ->check(CLI::ExistingFile);
}

void add_input(CLI::App* cmd, Flags& f) {
  cmd->add_option("--input", f.input, "Data matrix (csv or tab separated)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--missing", f.missing, "Token for missing cells");
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--seed", f.seed, "Random seed")->required();
  cmd->add_option("--output", f.output, "Output directory");
}

json chain_json(const ChainFlags& c) {
  return {{"iterations", c.iterations},
          {"burn_in", c.burn_in},
          {"thin", c.thin},
          {"refinements", c.refinements},
          {"series_tol", c.series_tol},
          {"max_order", c.max_order},
          {"random_scan", c.random_scan},
          {"fixed_rank", c.fixed_rank >= 0 ? json(c.fixed_rank) : json(nullptr)}};
}

json glm_json(const GlmFlags& g) {
  json covs = json::array();
  for (const std::string& path : g.covariates)
    covs.push_back({{"path", fs::absolute(path).string()},
                    {"digest", content_digest(read_text_file(path))}});
  return {{"link", g.link},
          {"row_effect", !g.no_row_effect},
          {"col_effect", !g.no_col_effect},
          {"beta_variance", g.beta_variance},
          {"d_variance", g.d_variance},
          {"covariates", covs}};
}

json input_json(const Flags& f) {
  return {{"path", fs::absolute(f.input).string()},
          {"digest", content_digest(read_text_file(f.input))},
          {"missing", f.missing}};
}

ChainConfig chain_from(const json& c, std::uint64_t seed) {
  ChainConfig cfg;
  cfg.iterations = c.at("iterations").get<long>();
  cfg.burn_in = c.at("burn_in").get<long>();
  cfg.thin = c.at("thin").get<long>();
  cfg.gibbs_refinements = c.at("refinements").get<int>();
  cfg.series_rel_tol = c.at("series_tol").get<double>();
  cfg.series_max_order = c.at("max_order").get<int>();
  cfg.random_scan_order = c.at("random_scan").get<bool>();
  if (!c.at("fixed_rank").is_null()) cfg.fixed_rank = c.at("fixed_rank").get<int>();
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

GlmConfig glm_from(const json& g) {
  GlmConfig cfg;
  cfg.link = parse_link(g.at("link").get<std::string>());
  cfg.fixed_row_effect = g.at("row_effect").get<bool>();
  cfg.fixed_col_effect = g.at("col_effect").get<bool>();
  cfg.beta_prior_variance = g.at("beta_variance").get<double>();
  cfg.d_prior_variance = g.at("d_variance").get<double>();
  return cfg;
}

std::string checked_read(const json& file) {
  const std::string path = file.at("path").get<std::string>();
  std::string text = read_text_file(path);
  if (content_digest(text) != file.at("digest").get<std::string>())
    throw ArgumentError("input " + path + " changed since the run was recorded");
  return text;
}

MatrixData input_matrix(const json& config) {
  const json& in = config.at("input");
  const std::string text = checked_read(in);
  try {
    return parse_matrix(text, in.at("missing").get<std::string>());
  } catch (const ParseError& e) {
    std::string msg = e.what();
    msg.erase(msg.rfind(" (line"));
    throw ParseError(in.at("path").get<std::string>() + ": " + msg, e.line());
  }
}

RelationalData relational_from(const json& config) {
  const MatrixData md = input_matrix(config);
  RelationalData data = RelationalData::from_matrix(md.values);
  data.observed = md.observed;
  for (const json& cov : config.at("glm").at("covariates")) {
    const MatrixData x = parse_matrix(checked_read(cov));
    if (x.values.rows() != data.rows() || x.values.cols() != data.cols())
      throw ArgumentError("covariate " + cov.at("path").get<std::string>() + " is " +
                          shape_string(x.values.rows(), x.values.cols()) + ", data is " +
                          shape_string(data.rows(), data.cols()));
    if (!x.observed.all())
      throw ArgumentError("covariate " + cov.at("path").get<std::string>() + " has missing cells");
    data.covariates.push_back(x.values);
  }
  return data;
}

std::string fmt(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

std::vector<std::string> run_fit(const json& config, const fs::path& dir, std::ostream& out) {
  const MatrixData md = input_matrix(config);
  const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
  const ChainConfig cfg = chain_from(config.at("chain"), seed);
  std::optional<Mask> mask;
  Matrix filled = md.values;
  if (!md.observed.all()) {
    mask = md.observed;
    if (!md.observed.any()) throw ArgumentError("input has no observed cells");
    const double mean = md.observed.select(md.values, 0.0).sum() / md.observed.count();
    filled = md.observed.select(md.values, mean);
  }
  const PriorConfig priors =
      make_prior(parse_prior_preset(config.at("prior").get<std::string>()), filled);
  const ChainSummary summary = run_chain(md.values, mask, priors, cfg);
  std::vector<std::string> files = save_outputs(summary, dir);
  out << "posterior mode rank " << summary.posterior_mode_rank() << " over "
      << summary.retained_scans << " retained scans\n";
  return files;
}

std::vector<std::string> run_fit_glm(const json& config, const fs::path& dir, std::ostream& out) {
  const RelationalData data = relational_from(config);
  const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
  const ChainConfig cfg = chain_from(config.at("chain"), seed);
  const GlmConfig gcfg = glm_from(config.at("glm"));
  const GlmSummary summary = run_glm_chain(data, gcfg, glm_prior(gcfg), cfg);
  std::vector<std::string> files = save_outputs(summary.chain, dir);

  std::string beta;
  for (std::size_t i = 0; i < summary.beta_samples.size(); ++i) {
    const Vector& b = summary.beta_samples[i];
    json j;
    j["scan"] = i < summary.chain.samples.size() ? summary.chain.samples[i].scan : 0;
    j["beta"] = std::vector<double>(b.data(), b.data() + b.size());
    beta += j.dump() + "\n";
  }
  write_text_file(dir / "beta_samples.jsonl", beta);
  write_text_file(dir / "mean_response.csv", matrix_to_csv(summary.mean_response));
  json s;
  s["beta_mean"] = std::vector<double>(summary.beta_mean.data(),
                                       summary.beta_mean.data() + summary.beta_mean.size());
  s["latent_acceptance_rate"] = summary.acceptance_rate;
  s["posterior_mode_rank"] = summary.chain.posterior_mode_rank();
  write_text_file(dir / "glm_summary.json", s.dump(2) + "\n");
  files.insert(files.end(), {"beta_samples.jsonl", "mean_response.csv", "glm_summary.json"});
  out << "posterior mode rank " << summary.chain.posterior_mode_rank()
      << ", latent acceptance " << summary.acceptance_rate << "\n";
  return files;
}

std::vector<std::string> run_simulate(const json& config, const fs::path& dir, std::ostream& out) {
  const json& sim = config.at("simulation");
  const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
  SimDesign design;
  design.m = sim.at("m").get<long>();
  design.n = sim.at("n").get<long>();
  design.true_rank = sim.at("rank").get<int>();
  design.workers = sim.at("workers").get<int>();
  design.prior = parse_prior_preset(config.at("prior").get<std::string>());
  design.chain = chain_from(config.at("chain"), seed);
  const int count = sim.at("datasets").get<int>();
  if (count < 1) throw ArgumentError("datasets must be at least 1");
  for (int i = 0; i < count; ++i)
    design.seeds.push_back(mix64(seed ^ mix64(static_cast<std::uint64_t>(i) + 1)));

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path records_path = dir / "records.jsonl";
  std::ofstream records(records_path, std::ios::binary | std::ios::trunc);
  if (!records) throw IoError("cannot open " + records_path.string() + " for writing");

  const StudyReport report = run_study(design, [&](const DatasetRecord& r) {
    records << record_to_json(r) << "\n";
    records.flush();
    out << "dataset " << r.index + 1 << "/" << count;
    if (r.ok)
      out << ": K_hat " << r.k_hat << " (K_e " << r.k_hat_e << ", K_c " << r.k_hat_c
          << "), ASE ratio " << (r.ase_ls > 0 ? r.ase_bayes / r.ase_ls : 0.0) << "\n";
    else
      out << ": failed: " << r.error << "\n";
  });
  if (!records) throw IoError("error writing " + records_path.string());
  records.close();
  write_text_file(dir / "study.json", aggregate_to_json(report.aggregate) + "\n");
  const StudyAggregate& a = report.aggregate;
  out << "Pr(K_hat = " << a.true_rank << "): bayes " << a.pr_correct << ", eigen-gap "
      << a.pr_correct_e << ", correlation " << a.pr_correct_c << "; median ASE ratio "
      << a.median_ase_ratio << "\n";
  return {"records.jsonl", "study.json"};
}

std::vector<std::string> run_crossval(const json& config, const fs::path& dir, std::ostream& out) {
  const RelationalData data = relational_from(config);
  const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
  const ChainConfig cfg = chain_from(config.at("chain"), seed);
  const GlmConfig gcfg = glm_from(config.at("glm"));
  const std::vector<int> ranks = config.at("crossval").at("ranks").get<std::vector<int>>();
  const int folds = config.at("crossval").at("folds").get<int>();
  const std::vector<double> lpp = cross_validate_lpp(data, ranks, folds, gcfg, glm_prior(gcfg), cfg);

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  std::string csv = "K,lpp\n";
  std::size_t best = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    csv += std::to_string(ranks[i]) + "," + format_double(lpp[i]) + "\n";
    if (lpp[i] > lpp[best]) best = i;
  }
  write_text_file(dir / "lpp.csv", csv);
  out << "best rank " << ranks[best] << " (lpp " << lpp[best] << ")\n";
  return {"lpp.csv"};
}

std::vector<std::string> run_baselines(const json& config, const fs::path& dir, std::ostream& out) {
  const MatrixData md = input_matrix(config);
  if (!md.observed.all()) throw ArgumentError("rank-baselines needs a complete matrix");
  const RankBaselines b = rank_baselines(md.values);
  json j;
  j["k_hat_e"] = b.k_hat_e;
  j["k_hat_c"] = b.k_hat_c;
  j["gram_eigenvalues"] = std::vector<double>(b.gram_eigenvalues.data(),
                                              b.gram_eigenvalues.data() + b.gram_eigenvalues.size());
  j["corr_eigenvalues"] = std::vector<double>(b.corr_eigenvalues.data(),
                                              b.corr_eigenvalues.data() + b.corr_eigenvalues.size());
  j["zero_variance_columns"] = b.zero_variance_columns;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text_file(dir / "baselines.json", j.dump(2) + "\n");
  out << "K_e " << b.k_hat_e << ", K_c " << b.k_hat_c << "\n";
  return {"baselines.json"};
}

/// Chains from a samples.jsonl file (phi, mu, psi, K) or from the columns of
/// a delimited file.
std::map<std::string, std::vector<double>> load_chains(const json& config) {
  const json& in = config.at("input");
  const std::string path = in.at("path").get<std::string>();
  const std::string text = checked_read(in);
  std::map<std::string, std::vector<double>> chains;
  if (fs::path(path).extension() == ".jsonl") {
    std::istringstream lines(text);
    std::string line;
    long number = 0;
    while (std::getline(lines, line)) {
      ++number;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json j = json::parse(line);
        for (const char* key : {"phi", "mu", "psi", "K"})
          if (j.contains(key)) chains[key].push_back(j.at(key).get<double>());
      } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what(), number);
      }
    }
    return chains;
  }
  const MatrixData md = parse_matrix(text, in.at("missing").get<std::string>());
  if (!md.observed.all()) throw ArgumentError("chains in " + path + " have missing values");
  for (Eigen::Index j = 0; j < md.values.cols(); ++j) {
    const Vector c = md.values.col(j);
    chains["column" + std::to_string(j + 1)] = std::vector<double>(c.data(), c.data() + c.size());
  }
  return chains;
}

std::vector<std::string> run_diagnose(const json& config, const fs::path& dir, std::ostream& out) {
  const auto chains = load_chains(config);
  if (chains.empty()) throw ArgumentError("no chains found in the input");
  std::map<std::string, ScalarDiagnostics> diag;
  for (const auto& [name, values] : chains) diag[name] = diagnose(values);
  json j = diagnostics_to_json(diag);
  for (auto& [name, d] : diag) j[name]["success"] = mcmc_success(d);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text_file(dir / "diagnostics.json", j.dump(2) + "\n");
  for (const auto& [name, d] : diag)
    out << name << ": geweke z " << fmt(d.geweke_z) << ", ess " << fmt(d.ess)
        << (mcmc_success(d) ? ", converged\n" : ", not converged\n");
  return {"diagnostics.json"};
}

std::vector<std::string> dispatch(const json& config, const fs::path& dir, std::ostream& out) {
  const std::string command = config.at("command").get<std::string>();
  if (command == "fit") return run_fit(config, dir, out);
  if (command == "fit-glm") return run_fit_glm(config, dir, out);
  if (command == "simulate") return run_simulate(config, dir, out);
  if (command == "crossval") return run_crossval(config, dir, out);
  if (command == "rank-baselines") return run_baselines(config, dir, out);
  if (command == "diagnose") return run_diagnose(config, dir, out);
  throw ArgumentError("unknown command '" + command + "' in configuration");
}

json resolve(const std::string& command, const Flags& f) {
  json c;
  c["command"] = command;
  c["seed"] = f.seed;
  c["output"] = f.output;
  if (command != "simulate") c["input"] = input_json(f);
  if (command == "fit" || command == "simulate") c["prior"] = f.prior;
  if (command == "fit" || command == "fit-glm" || command == "simulate" || command == "crossval")
    c["chain"] = chain_json(f.chain);
  if (command == "fit-glm" || command == "crossval") c["glm"] = glm_json(f.glm);
  if (command == "simulate")
    c["simulation"] = {{"m", f.m}, {"n", f.n}, {"rank", f.rank}, {"datasets", f.datasets},
                       {"workers", f.workers}};
  if (command == "crossval") c["crossval"] = {{"ranks", f.ranks}, {"folds", f.folds}};
  return c;
}

}  // namespace

std::vector<std::string> execute_config(const json& config, std::ostream& out) {
  const fs::path dir = config.at("output").get<std::string>();
  std::vector<std::string> files = dispatch(config, dir, out);
  json manifest;
  manifest["version"] = BSVD_VERSION;
  manifest["command"] = config.at("command");
  manifest["seed"] = config.at("seed");
  manifest["config"] = config;
  manifest["outputs"] = files;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  files.push_back("manifest.json");
  return files;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian rank selection and model averaging for the SVD", "bsvd"};
  app.set_version_flag("--version", BSVD_VERSION);
  app.require_subcommand(1);
  Flags f;

  CLI::App* fit = app.add_subcommand("fit", "Variable-rank Gibbs sampler on a Gaussian matrix");
  add_common(fit, f);
  add_input(fit, f);
  fit->add_option("--prior", f.prior, "empirical-bayes, diffuse or detectability")
      ->check(CLI::IsMember({"empirical-bayes", "diffuse", "detectability"}));
  add_chain_options(fit, f);

  CLI::App* fit_glm = app.add_subcommand("fit-glm", "Bilinear model for binary or count data");
  add_common(fit_glm, f);
  add_input(fit_glm, f);
  add_glm_options(fit_glm, f);
  add_chain_options(fit_glm, f);

  CLI::App* simulate = app.add_subcommand("simulate", "Rank recovery study on synthetic data");
  add_common(simulate, f);
  simulate->add_option("--m", f.m, "Rows")->check(CLI::PositiveNumber);
  simulate->add_option("--n", f.n, "Columns")->check(CLI::PositiveNumber);
  simulate->add_option("--rank", f.rank, "True rank")->check(CLI::NonNegativeNumber);
  simulate->add_option("--datasets", f.datasets, "Number of datasets")->check(CLI::PositiveNumber);
  simulate->add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
  simulate->add_option("--prior", f.prior, "empirical-bayes, diffuse or detectability")
      ->check(CLI::IsMember({"empirical-bayes", "diffuse", "detectability"}));
  add_chain_options(simulate, f);

  CLI::App* crossval = app.add_subcommand("crossval", "Held-out log predictive probability by rank");
  add_common(crossval, f);
  add_input(crossval, f);
  crossval->add_option("--ranks", f.ranks, "Ranks to compare")->delimiter(',');
  crossval->add_option("--folds", f.folds, "Number of folds")->check(CLI::Range(2, 1000));
  add_glm_options(crossval, f);
  add_chain_options(crossval, f);

  CLI::App* baselines = app.add_subcommand("rank-baselines", "Eigenvalue-gap and correlation rank estimates");
  add_common(baselines, f);
  add_input(baselines, f);

  CLI::App* diag = app.add_subcommand("diagnose", "Geweke z and effective sample size of chains");
  add_common(diag, f);
  add_input(diag, f);

  CLI::App* replay = app.add_subcommand("replay", "Rerun a command from its manifest.json");
  replay->add_option("--manifest", f.manifest, "manifest.json of an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  replay->add_option("--output", f.output, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    json config;
    if (replay->parsed()) {
      json manifest;
      try {
        manifest = json::parse(read_text_file(f.manifest));
        config = manifest.at("config");
      } catch (const json::exception& e) {
        throw ParseError(f.manifest + ": " + e.what(), 1);
      }
      config["output"] = f.output;
    } else {
      for (CLI::App* sub : app.get_subcommands()) config = resolve(sub->get_name(), f);
    }
    execute_config(config, out);
    return exit_ok;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return exit_numerical;
  } catch (const json::exception& e) {
    err << "configuration error: " << e.what() << "\n";
    return exit_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_config;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("bsvd");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace bsvd
