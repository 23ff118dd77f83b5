#include "toml_lite.hpp"

#include <cctype>

#include <fmt/format.h>

#include "followbench/common.hpp"

namespace followbench::toml {
namespace {

class Parser {
 public:
  explicit Parser(const std::string& text) : s_(text) {}

  nlohmann::json document() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        table = &open_table(root);
      } else {
        const std::string key = parse_key();
        skip_ws();
        expect('=');
        skip_ws();
        if (table->contains(key)) fail(fmt::format("duplicate key '{}'", key));
        (*table)[key] = parse_value();
      }
      end_of_line();
    }
    return root;
  }

  nlohmann::json single_value() {
    skip_ws();
    auto v = parse_value();
    skip_ws();
    if (!eof()) fail("trailing characters after value");
    return v;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(fmt::format("config line {}: {}", line_, what));
  }

 private:
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  char get() {
    const char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }
  void expect(char c) {
    if (peek() != c) fail(fmt::format("expected '{}'", c));
    get();
  }
  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) get();
  }
  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') get();
  }
  void skip_blank_lines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\r') get();
      if (peek() != '\n') return;
      get();
    }
  }
  // Whitespace, newlines and comments inside arrays.
  void skip_ws_multiline() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        get();
        continue;
      }
      return;
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (peek() == '\r') get();
    if (eof()) return;
    if (peek() != '\n') fail("expected end of line");
    get();
  }

  static bool bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  }

  std::string parse_key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    std::string key;
    while (!eof() && bare_key_char(peek())) key += get();
    if (key.empty()) fail("expected a key");
    return key;
  }

  nlohmann::json& open_table(nlohmann::json& root) {
    expect('[');
    if (peek() == '[') fail("arrays of tables are not supported");
    nlohmann::json* node = &root;
    while (true) {
      skip_ws();
      const std::string part = parse_key();
      skip_ws();
      auto& child = (*node)[part];
      if (child.is_null()) child = nlohmann::json::object();
      if (!child.is_object()) fail(fmt::format("'{}' is already a value", part));
      node = &child;
      if (peek() == '.') {
        get();
        continue;
      }
      break;
    }
    expect(']');
    return *node;
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      switch (const char e = get()) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: fail(fmt::format("unsupported escape '\\{}'", e));
      }
    }
  }

  std::string literal_string() {
    expect('\'');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == '\'') return out;
      out += c;
    }
  }

  nlohmann::json parse_value() {
    const char c = peek();
    if (c == '"') {
      if (s_.compare(pos_, 3, "\"\"\"") == 0) fail("multi-line strings are not supported");
      return basic_string();
    }
    if (c == '\'') return literal_string();
    if (c == '[') return parse_array();
    if (c == '{') fail("inline tables are not supported");
    std::string token;
    while (!eof() && (bare_key_char(peek()) || peek() == '.' || peek() == '+')) token += get();
    if (token == "true") return true;
    if (token == "false") return false;
    if (token.empty()) fail("expected a value");
    std::string digits;
    for (char ch : token)
      if (ch != '_') digits += ch;
    const bool is_float = digits.find_first_of(".eE") != std::string::npos ||
                          digits == "inf" || digits == "+inf" || digits == "-inf";
    try {
      if (is_float) return parse_real(digits);
      return parse_int(digits);
    } catch (const Error&) {
      fail(fmt::format("invalid value '{}'", token));
    }
  }

  nlohmann::json parse_array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    while (true) {
      skip_ws_multiline();
      if (peek() == ']') {
        get();
        return arr;
      }
      arr.push_back(parse_value());
      skip_ws_multiline();
      if (peek() == ',') {
        get();
        continue;
      }
      if (peek() == ']') {
        get();
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

}  // namespace

nlohmann::json parse(const std::string& text) { return Parser(text).document(); }

nlohmann::json parse_file(const std::string& path) {
  try {
    return parse(read_file(path));
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path, e.what()));
  }
}

nlohmann::json parse_value_lenient(const std::string& text) {
  try {
    return Parser(text).single_value();
  } catch (const Error&) {
    return text;
  }
}

}  // namespace followbench::toml
