#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace headbench {

// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid configuration or input.
int run_cli(int argc, const char* const* argv);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace headbench
