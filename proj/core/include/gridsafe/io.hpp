#pragma once

// File helpers shared by the CLI and tests.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "gridsafe/netmodel.hpp"

namespace gridsafe::io {

std::string read_text_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes (truncate + write); creates
/// parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view content);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline; deterministic for equal input.
std::string dump_json(const nlohmann::json& doc);

/// Loads and validates a network document; errors are prefixed with the path.
net::NetworkSpec load_network(const std::filesystem::path& path);

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace gridsafe::io
