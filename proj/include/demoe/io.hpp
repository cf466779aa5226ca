#pragma once

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace demoe {

/// Error raised for malformed input files; carries the 1-based line number
/// when the problem is tied to a single line (0 otherwise).
class InputError : public std::runtime_error {
public:
  InputError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Calls `fn(object, line_number)` for every non-blank line of a JSON-lines
/// file. Lines that fail to parse or are not JSON objects raise InputError.
void for_each_json_line(const std::filesystem::path& path,
                        const std::function<void(const nlohmann::json&, std::size_t)>& fn);

nlohmann::json read_json_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Writes `contents` to a sibling temp file and renames it over `path`, so
/// readers never observe a partially written output.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Serializes one JSON object per line.
std::string to_json_lines(const std::vector<nlohmann::json>& rows);

/// Formats a double with round-trip precision for TSV exports.
std::string format_double(double value);

}  // namespace demoe
