#include "headbench/text.hpp"

#include <charconv>
#include <system_error>

#include "headbench/error.hpp"

namespace headbench::text {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  if (res.ec != std::errc{}) throw Error("failed to format double");
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view field) {
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
    throw IoError("malformed number '" + std::string(field) + "'");
  return value;
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

void require_plain_field(std::string_view field) {
  if (field.find_first_of(",\"\n\r") != std::string_view::npos)
    throw ValidationError("field '" + std::string(field) + "' cannot be written to CSV");
}

}  // namespace headbench::text
