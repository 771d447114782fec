#pragma once

// Command-line front end: build, design, sweep, simulate, topology, replay.
//
// Option precedence: built-in defaults < the "options" object of the config
// document < command-line flags. Every command writes manifest.json into
// its output directory; `replay` re-runs a manifest and checks the output
// hashes it records.

#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gridsafe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitSafety = 3;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Shortest round-trip decimal form; integral values keep a trailing ".0".
std::string format_number(double value);

/// Output directory contents recorded by a command.
nlohmann::json read_manifest(const std::string& out_dir);

}  // namespace gridsafe::cli
