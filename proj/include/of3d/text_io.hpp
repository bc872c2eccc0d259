#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace of3d {

// Parse failure carrying a 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);
bool parse_double(std::string_view token, double& out);
bool parse_int(std::string_view token, long long& out);

std::vector<std::string_view> split_ws(std::string_view line);

std::string read_file(const std::filesystem::path& path);
// Truncates, then writes.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Line cursor over a text buffer, tracking line numbers for diagnostics.
class LineReader {
 public:
  LineReader(std::string source_name, std::string_view text);
  bool next(std::string_view& line);
  std::string_view expect(const char* what);
  std::size_t line_number() const { return line_; }
  [[noreturn]] void fail(const std::string& what) const;
  bool at_end() const { return pos_ >= text_.size(); }

 private:
  std::string source_;
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

}  // namespace of3d
