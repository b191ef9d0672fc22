#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace emtune {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Lower-case hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

std::string read_file(const fs::path& path);
/// Writes via a temporary sibling and rename so readers never see a partial file.
void write_file(const fs::path& path, std::string_view contents);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Lower-cased maximal runs of ASCII alphanumerics.
std::vector<std::string> alnum_tokens(std::string_view s);

/// Round half away from zero at `decimals` places.
double round_half_away(double value, int decimals);

/// Fixed-point rendering after round_half_away; never prints "-0.00".
std::string format_fixed(double value, int decimals);

std::vector<json> read_jsonl(const fs::path& path);
void write_jsonl(const fs::path& path, const std::vector<json>& rows);

}  // namespace emtune
