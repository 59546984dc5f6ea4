#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "bsvd/cli.hpp"
#include "bsvd/io.hpp"
#include "oracles.hpp"

using namespace bsvd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Fresh scratch directory, removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("bsvd-test-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write_matrix(const std::string& path, const Matrix& m) { write_text_file(path, matrix_to_csv(m)); }

Matrix low_rank_data(std::uint64_t seed, Eigen::Index m, Eigen::Index n, double d) {
  std::mt19937_64 g(seed);
  return d * oracle::unit_vector(g, m) * oracle::unit_vector(g, n).transpose() + oracle::gaussian(g, m, n);
}

}  // namespace

TEST_CASE("parse_matrix") {
  SUBCASE("plain comma separated") {
    const MatrixData d = parse_matrix("1,2\n3,4");
    REQUIRE(d.values.rows() == 2);
    REQUIRE(d.values.cols() == 2);
    CHECK(d.values(0, 1) == 2.0);
    CHECK(d.values(1, 0) == 3.0);
    CHECK(d.observed.all());
  }
  SUBCASE("missing token") {
    const MatrixData d = parse_matrix("1,NA\n3,4");
    CHECK_FALSE(d.observed(0, 1));
    CHECK(d.values(0, 1) == 0.0);
    CHECK(d.observed.count() == 3);
    CHECK_FALSE(parse_matrix("1,.\n3,4", ".").observed(0, 1));
  }
  SUBCASE("tabs, header, CRLF, quotes and blank trailing lines") {
    const MatrixData d = parse_matrix("\"a\"\t\"b\"\r\n1.5\t-2e-3\r\n 7 \t8\r\n\r\n");
    REQUIRE(d.values.rows() == 2);
    CHECK(d.values(0, 1) == -2e-3);
    CHECK(d.values(1, 0) == 7.0);
  }
  SUBCASE("errors carry line numbers") {
    try {
      parse_matrix("1,2\n3\n");
      FAIL("ragged rows accepted");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
      parse_matrix("1,2\n3,x\n");
      FAIL("non-numeric cell accepted");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_matrix(""), ParseError);
    CHECK_THROWS_AS(parse_matrix("a,b\n"), ParseError);
  }
}

TEST_CASE("format_double and CSV round trip") {
  std::mt19937_64 g(1);
  for (double x : {0.1, -1e-300, 1.0 / 3.0, 6.02214076e23, 0.0, -0.0})
    CHECK(std::stod(format_double(x)) == x);
  Matrix m = oracle::gaussian(g, 7, 4);
  m(2, 3) = 1e-17;
  Mask mask = Mask::Constant(7, 4, true);
  mask(5, 1) = false;
  const MatrixData back = parse_matrix(matrix_to_csv(m, &mask));
  CHECK(back.observed(5, 1) == false);
  for (Eigen::Index j = 0; j < 4; ++j)
    for (Eigen::Index i = 0; i < 7; ++i)
      if (mask(i, j)) CHECK(back.values(i, j) == m(i, j));

  TempDir dir("roundtrip");
  write_matrix(dir / "m.csv", m);
  CHECK(load_matrix(dir / "m.csv").values == m);
  try {
    load_matrix(dir / "absent.csv");
    FAIL("missing file accepted");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("absent.csv") != std::string::npos);
  }
}

TEST_CASE("content_digest") {
  // FNV-1a 64 reference values
  CHECK(content_digest("") == "cbf29ce484222325");
  CHECK(content_digest("a") == "af63dc4c8601ec8c");
  CHECK(content_digest("foobar") == "85944171f73967e8");
}

TEST_CASE("save_outputs") {
  const Matrix y = low_rank_data(2, 6, 4, 8.0);
  ChainConfig cfg;
  cfg.iterations = 300;
  cfg.burn_in = 100;
  cfg.seed = 3;
  const ChainSummary s = run_chain(y, std::nullopt, empirical_bayes_prior(y), cfg);
  TempDir dir("save");
  const auto files = save_outputs(s, dir.path / "nested");
  CHECK(files == std::vector<std::string>{"rank_posterior.csv", "M_mean.csv", "samples.jsonl", "diagnostics.json"});

  const MatrixData post = load_matrix(dir.path / "nested" / "rank_posterior.csv");
  REQUIRE(post.values.cols() == 2);
  CHECK(post.values.rows() == 5);
  CHECK(std::abs(post.values.col(1).sum() - 1.0) < 1e-9);
  CHECK(read_text_file(dir.path / "nested" / "rank_posterior.csv").rfind("K,probability\n", 0) == 0);

  const MatrixData mean = load_matrix(dir.path / "nested" / "M_mean.csv");
  CHECK(mean.values.rows() == 6);
  CHECK(mean.values.cols() == 4);
  CHECK(mean.values == s.M_mean);

  std::istringstream lines(read_text_file(dir.path / "nested" / "samples.jsonl"));
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const json j = json::parse(line);
    for (const char* key : {"scan", "K", "phi", "mu", "psi", "d"}) CHECK(j.contains(key));
    // one entry per column, zero when inactive
    REQUIRE(j["d"].size() == 4);
    int nonzero = 0;
    for (const auto& v : j["d"]) nonzero += v.get<double>() != 0.0;
    CHECK(nonzero == j["K"].get<int>());
    ++count;
  }
  CHECK(count == s.samples.size());

  const json diag = json::parse(read_text_file(dir.path / "nested" / "diagnostics.json"));
  REQUIRE(diag.contains("phi"));
  CHECK(diag["phi"].contains("geweke_z"));
  CHECK(diag["phi"].contains("ess"));

  // unwritable destination
  write_text_file(dir / "file", "x");
  CHECK_THROWS_AS(save_outputs(s, dir.path / "file" / "sub"), IoError);
}

TEST_CASE("exit codes") {
  TempDir dir("exit");
  write_matrix(dir / "y.csv", low_rank_data(4, 6, 4, 6.0));
  SUBCASE("missing seed") {
    const Run r = cli({"fit", "--input", dir / "y.csv"});
    CHECK(r.code == exit_config);
    CHECK(r.err.find("--seed") != std::string::npos);
  }
  SUBCASE("unknown flag prints usage") {
    const Run r = cli({"fit", "--input", dir / "y.csv", "--seed", "1", "--bogus"});
    CHECK(r.code == exit_config);
    CHECK_FALSE(r.err.empty());
  }
  SUBCASE("no subcommand") { CHECK(cli({}).code == exit_config); }
  SUBCASE("help") { CHECK(cli({"--help"}).code == exit_ok); }
  SUBCASE("ragged input") {
    write_text_file(dir / "bad.csv", "1,2\n3\n");
    const Run r = cli({"fit", "--input", dir / "bad.csv", "--seed", "1", "--output", dir / "o"});
    CHECK(r.code == exit_config);
    CHECK(r.err.find("line 2") != std::string::npos);
  }
  SUBCASE("invalid chain settings") {
    const Run r = cli({"fit", "--input", dir / "y.csv", "--seed", "1", "--iterations", "10", "--burn-in", "20",
                       "--output", dir / "o"});
    CHECK(r.code == exit_config);
  }
  SUBCASE("numerical failure") {
    write_matrix(dir / "strong.csv", low_rank_data(5, 6, 4, 300.0));
    const Run r = cli({"fit", "--input", dir / "strong.csv", "--seed", "1", "--iterations", "20", "--burn-in",
                       "10", "--max-order", "8", "--output", dir / "o"});
    CHECK(r.code == exit_numerical);
  }
}

TEST_CASE("fit writes outputs and a replayable manifest") {
  TempDir dir("fit");
  write_matrix(dir / "y.csv", low_rank_data(6, 8, 5, 7.0));
  const Run r = cli({"fit", "--input", dir / "y.csv", "--seed", "1", "--iterations", "400", "--burn-in", "200",
                     "--thin", "10", "--prior", "empirical-bayes", "--output", dir / "out"});
  REQUIRE(r.code == exit_ok);
  const json manifest = json::parse(read_text_file(dir.path / "out" / "manifest.json"));
  CHECK(manifest["command"] == "fit");
  CHECK(manifest["seed"] == 1);
  for (const auto& f : manifest["outputs"]) {
    const fs::path p = dir.path / "out" / f.get<std::string>();
    REQUIRE(fs::exists(p));
    const std::string text = read_text_file(p);
    if (p.extension() == ".json") CHECK_FALSE(json::parse(text).is_discarded());
    if (p.extension() == ".csv") CHECK_NOTHROW(parse_matrix(text));
  }

  const Run again = cli({"replay", "--manifest", dir / "out/manifest.json", "--output", dir / "replay"});
  REQUIRE(again.code == exit_ok);
  for (const char* f : {"samples.jsonl", "rank_posterior.csv", "M_mean.csv", "diagnostics.json"})
    CHECK(read_text_file(dir.path / "out" / f) == read_text_file(dir.path / "replay" / f));

  // a changed input is refused on replay
  write_matrix(dir / "y.csv", low_rank_data(7, 8, 5, 7.0));
  CHECK(cli({"replay", "--manifest", dir / "out/manifest.json", "--output", dir / "replay2"}).code == exit_config);
}

TEST_CASE("missing cells through fit") {
  TempDir dir("missing");
  write_text_file(dir / "y.csv", "c1,c2,c3\n1,2,3\n4,NA,6\n7,8,9\n1,0,2\n");
  const Run r = cli({"fit", "--input", dir / "y.csv", "--seed", "9", "--iterations", "200", "--burn-in", "100",
                     "--output", dir / "out"});
  REQUIRE(r.code == exit_ok);
  const MatrixData mean = load_matrix(dir.path / "out" / "M_mean.csv");
  CHECK(mean.values.rows() == 4);
  CHECK(mean.values.cols() == 3);
  CHECK(mean.values.allFinite());
}

TEST_CASE("other commands run and replay") {
  TempDir dir("commands");
  std::mt19937_64 g(10);
  Matrix bin(10, 6);
  std::bernoulli_distribution coin(0.4);
  for (Eigen::Index j = 0; j < 6; ++j)
    for (Eigen::Index i = 0; i < 10; ++i) bin(i, j) = coin(g);
  write_matrix(dir / "bin.csv", bin);
  write_matrix(dir / "y.csv", low_rank_data(11, 8, 5, 6.0));

  const std::vector<std::vector<std::string>> commands = {
      {"fit-glm", "--input", dir / "bin.csv", "--seed", "2", "--iterations", "100", "--burn-in", "50"},
      {"simulate", "--m", "6", "--n", "4", "--rank", "1", "--datasets", "2", "--seed", "7", "--iterations", "100",
       "--burn-in", "50"},
      {"crossval", "--input", dir / "bin.csv", "--seed", "3", "--ranks", "0,1", "--folds", "2", "--iterations",
       "60", "--burn-in", "30"},
      {"rank-baselines", "--input", dir / "y.csv", "--seed", "4"},
  };
  for (std::size_t c = 0; c < commands.size(); ++c) {
    CAPTURE(commands[c][0]);
    const std::string out = dir / ("out" + std::to_string(c));
    std::vector<std::string> args = commands[c];
    args.push_back("--output");
    args.push_back(out);
    const Run r = cli(args);
    REQUIRE(r.code == exit_ok);
    const json manifest = json::parse(read_text_file(out + "/manifest.json"));
    const std::string re = dir / ("replay" + std::to_string(c));
    REQUIRE(cli({"replay", "--manifest", out + "/manifest.json", "--output", re}).code == exit_ok);
    for (const auto& f : manifest["outputs"]) {
      const std::string name = f.get<std::string>();
      CAPTURE(name);
      CHECK(read_text_file(out + "/" + name) == read_text_file(re + "/" + name));
    }
  }

  // diagnose reads a samples file produced by fit
  REQUIRE(cli({"fit", "--input", dir / "y.csv", "--seed", "5", "--iterations", "2200", "--burn-in", "200",
               "--thin", "2", "--output", dir / "fit"})
              .code == exit_ok);
  const Run d = cli({"diagnose", "--input", dir / "fit/samples.jsonl", "--seed", "1", "--output", dir / "diag"});
  REQUIRE(d.code == exit_ok);
  const json diag = json::parse(read_text_file(dir.path / "diag" / "diagnostics.json"));
  CHECK(diag.contains("phi"));
}

TEST_CASE("installed binary") {
  const char* exe = std::getenv("BSVD_CLI");
  if (!exe) {
    MESSAGE("BSVD_CLI not set; skipping the process-level check");
    return;
  }
  TempDir dir("binary");
  write_matrix(dir / "y.csv", low_rank_data(12, 6, 4, 6.0));
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  const std::string bin = std::string("\"") + exe + "\"";
  CHECK(status(bin + " fit --input " + dir / "y.csv" + " --seed 1 --iterations 100 --burn-in 50 --output " +
               dir / "o") == 0);
  CHECK(fs::exists(dir.path / "o" / "manifest.json"));
  CHECK(status(bin + " fit --input " + dir / "y.csv") == 2);
  CHECK(status(bin + " frobnicate") == 2);
}
