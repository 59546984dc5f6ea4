#pragma once

// Command-line front end. Every command is resolved into a JSON run
// configuration, executed, and recorded in manifest.json so that
// `replay --manifest` can rerun it.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace bsvd {

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_numerical = 3 };

/// Runs a resolved configuration (the "config" object of a manifest) and
/// writes its outputs and manifest.json. Returns the output file names.
std::vector<std::string> execute_config(const nlohmann::json& config, std::ostream& out);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bsvd
