#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace headbench::text {

// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view field);

// Plain comma split; fields never contain quotes or commas in the formats written here.
std::vector<std::string> split_csv(std::string_view line);

// Rejects fields that would break the plain CSV encoding.
void require_plain_field(std::string_view field);

}  // namespace headbench::text
