#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pixforge {

// Shortest decimal form that parses back to the same double.
std::string format_number(double value);
double parse_number(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

}  // namespace pixforge
