#pragma once

// Delimited matrix files and chain output files.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bsvd/gibbs.hpp"

namespace bsvd {

struct MatrixData {
  Matrix values;
  Mask observed;
};

/// Comma- or tab-separated numbers, one row per line. A first line that does
/// not parse as numbers is taken as a header. Cells equal to `missing` are
/// stored as 0 with observed = false.
MatrixData parse_matrix(std::string_view text, const std::string& missing = "NA");
MatrixData load_matrix(const std::filesystem::path& path, const std::string& missing = "NA");

/// Shortest decimal string that reads back to the same double.
std::string format_double(double x);

std::string matrix_to_csv(const Matrix& m, const Mask* observed = nullptr,
                          const std::string& missing = "NA");

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

/// 64-bit FNV-1a digest, printed as 16 hex digits.
std::string content_digest(std::string_view bytes);

nlohmann::json sample_to_json(const ScanSample& s);
nlohmann::json diagnostics_to_json(const std::map<std::string, ScalarDiagnostics>& d);

/// Writes rank_posterior.csv, M_mean.csv, samples.jsonl and diagnostics.json
/// into `dir` (created if needed) and returns the file names.
std::vector<std::string> save_outputs(const ChainSummary& summary,
                                      const std::filesystem::path& dir);

}  // namespace bsvd
