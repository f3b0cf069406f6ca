#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace agggp {

/// Writes to a temporary sibling file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Splits one CSV record on commas. Quoting is not supported.
std::vector<std::string_view> split_csv_line(std::string_view line);

/// Parses a '.'-decimal number; throws InputError mentioning `context`.
double parse_double(std::string_view text, std::string_view context);

/// Shortest representation that round-trips exactly.
std::string format_double(double value);

}  // namespace agggp
