#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace trader {

/// Shortest decimal that parses back to the identical double.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<std::int64_t> parse_int(std::string_view text);

/// Splits on commas and trims surrounding whitespace (including a trailing '\r').
/// No quoting: every file this project reads or writes is plain numeric CSV.
std::vector<std::string> split_csv_line(std::string_view line);

/// Header plus string cells, as written by every CSV emitter in this project.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Throws Error when the column is absent.
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
};

/// Throws MissingFile, or MalformedRow when a row's width differs from the header.
CsvTable read_csv_table(const std::filesystem::path& path);

}  // namespace trader
