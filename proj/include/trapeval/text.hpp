#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace trapeval::text {

/// Shortest round-trip decimal form, always carrying a decimal point
/// ("1.0", "0.5", "1e-07").  Output is locale independent.
std::string format_real(double value);

std::vector<std::string> split(std::string_view line, char sep);

std::string_view trim(std::string_view s);

/// Strict numeric parses; throw ParseError naming `what` on failure.
double parse_real(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace trapeval::text
