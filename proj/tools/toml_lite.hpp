#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace followbench::toml {

/// Reads the flat TOML subset used by run configs: `[table]` and
/// `[table.sub]` headers, `key = value` pairs with basic/literal strings,
/// integers, floats, booleans and arrays of those (arrays may span lines).
/// Inline tables, dates and multi-line strings are rejected. Throws
/// followbench::Error with the offending line number.
nlohmann::json parse(const std::string& text);
nlohmann::json parse_file(const std::string& path);

/// Parses a single TOML value, e.g. from a `--set key=value` flag. Text that
/// is not a valid value is returned as a plain string.
nlohmann::json parse_value_lenient(const std::string& text);

}  // namespace followbench::toml
