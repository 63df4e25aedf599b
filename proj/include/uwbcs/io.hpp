#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace uwbcs {

/// Shortest decimal that reads back to the same double.
std::string format_double(double value);

/// Parses a full field as a double; throws InvalidArgument otherwise.
double parse_double(std::string_view field);

/// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace uwbcs
