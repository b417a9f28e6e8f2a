#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace salign {

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never observe a
/// partial file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// 17 significant digits; parses back to the identical double.
std::string format_g17(double v);
std::string format_fixed(double v, int digits);

std::vector<std::string> split_whitespace(std::string_view line);

}  // namespace salign
