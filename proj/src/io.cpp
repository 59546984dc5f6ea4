#include "bsvd/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bsvd {

using json = nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

bool parse_number(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_cells(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      return cells;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

}  // namespace

MatrixData parse_matrix(std::string_view text, const std::string& missing) {
  struct Line {
    long number;
    std::string_view body;
  };
  std::vector<Line> lines;
  long number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    ++number;
    std::string_view body = trim(text.substr(start, pos - start));
    if (!body.empty()) lines.push_back({number, body});
    start = pos + 1;
  }
  if (lines.empty()) throw ParseError("empty matrix file", 1);

  const char delim = lines.front().body.find('\t') != std::string_view::npos ? '\t' : ',';

  auto is_numeric_row = [&](std::string_view body) {
    for (std::string_view c : split_cells(body, delim)) {
      double v;
      if (c != missing && !parse_number(c, v)) return false;
    }
    return true;
  };
  std::size_t first = 0;
  if (!is_numeric_row(lines.front().body)) first = 1;
  if (first >= lines.size()) throw ParseError("matrix file has a header but no data", lines.front().number);

  const std::size_t rows = lines.size() - first;
  const std::size_t cols = split_cells(lines[first].body, delim).size();
  MatrixData out;
  out.values = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  out.observed = Mask::Constant(out.values.rows(), out.values.cols(), true);
  for (std::size_t r = 0; r < rows; ++r) {
    const Line& line = lines[first + r];
    const auto cells = split_cells(line.body, delim);
    if (cells.size() != cols)
      throw ParseError("ragged row: expected " + std::to_string(cols) + " cells, found " +
                           std::to_string(cells.size()),
                       line.number);
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = static_cast<Eigen::Index>(r);
      const auto j = static_cast<Eigen::Index>(c);
      if (cells[c] == missing) {
        out.observed(i, j) = false;
        continue;
      }
      double v;
      if (!parse_number(cells[c], v) || !std::isfinite(v))
        throw ParseError("non-numeric cell '" + std::string(cells[c]) + "' in column " +
                             std::to_string(c + 1),
                         line.number);
      out.values(i, j) = v;
    }
  }
  return out;
}

MatrixData load_matrix(const std::filesystem::path& path, const std::string& missing) {
  const std::string text = read_text_file(path);
  try {
    return parse_matrix(text, missing);
  } catch (const ParseError& e) {
    std::string msg = e.what();
    msg.erase(msg.rfind(" (line"));
    throw ParseError(path.string() + ": " + msg, e.line());
  }
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw NumericalError("could not format a double");
  return std::string(buf, ptr);
}

std::string matrix_to_csv(const Matrix& m, const Mask* observed, const std::string& missing) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += observed && !(*observed)(i, j) ? missing : format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading " + path.string());
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("error writing " + path.string());
}

std::string content_digest(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json sample_to_json(const ScanSample& s) {
  json j;
  j["scan"] = s.scan;
  j["K"] = s.rank;
  j["phi"] = s.phi;
  j["mu"] = s.mu;
  j["psi"] = s.psi;
  j["d"] = std::vector<double>(s.d.data(), s.d.data() + s.d.size());
  return j;
}

json diagnostics_to_json(const std::map<std::string, ScalarDiagnostics>& d) {
  json out = json::object();
  for (const auto& [name, diag] : d) {
    out[name] = {{"geweke_z", diag.geweke_z ? json(*diag.geweke_z) : json(nullptr)},
                 {"ess", diag.ess ? json(*diag.ess) : json(nullptr)}};
  }
  return out;
}

std::vector<std::string> save_outputs(const ChainSummary& summary,
                                      const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  std::string post = "K,probability\n";
  const Vector p = summary.rank_posterior();
  for (Eigen::Index k = 0; k < p.size(); ++k)
    post += std::to_string(k) + "," + format_double(p[k]) + "\n";
  write_text_file(dir / "rank_posterior.csv", post);

  write_text_file(dir / "M_mean.csv", matrix_to_csv(summary.M_mean));

  std::string samples;
  for (const ScanSample& s : summary.samples) samples += sample_to_json(s).dump() + "\n";
  write_text_file(dir / "samples.jsonl", samples);

  write_text_file(dir / "diagnostics.json", diagnostics_to_json(summary.diagnostics).dump(2) + "\n");
  return {"rank_posterior.csv", "M_mean.csv", "samples.jsonl", "diagnostics.json"};
}

}  // namespace bsvd
