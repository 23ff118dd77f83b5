#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace followbench {

/// Raised for malformed input files, violated preconditions and invalid
/// configuration. The message is meant for an operator, not a debugger.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to exactly `value`.
std::string format_real(double value);

/// Parses a full-string real; throws Error on trailing garbage.
double parse_real(std::string_view text);
std::int64_t parse_int(std::string_view text);

/// 64-bit FNV-1a, rendered as 16 hex digits. Stable across platforms, used
/// for source and config fingerprints in manifests.
std::string fnv1a_hex(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

inline constexpr std::string_view kToolkitVersion = "0.3.0";

}  // namespace followbench
