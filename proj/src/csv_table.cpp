#include "trader/csv_table.hpp"

#include <array>
#include <charconv>
#include <fstream>

#include "trader/errors.hpp"

namespace trader {

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) {
    throw Error("format_double: conversion failed");
  }
  return std::string(buf.data(), end);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') {
    text.remove_prefix(1);
  }
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    return std::nullopt;
  }
  return value;
}

std::optional<std::int64_t> parse_int(std::string_view text) {
  text = trim(text);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    return std::nullopt;
  }
  return value;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    const auto cell = line.substr(begin, comma == std::string_view::npos ? line.npos : comma - begin);
    cells.emplace_back(trim(cell));
    if (comma == std::string_view::npos) {
      break;
    }
    begin = comma + 1;
  }
  return cells;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) {
      return i;
    }
  }
  throw Error("csv column not found: " + std::string(name));
}

double CsvTable::number(std::size_t row, std::string_view name) const {
  const auto value = parse_double(rows.at(row).at(column(name)));
  if (!value) {
    throw MalformedRow(row + 2, "column " + std::string(name) + " is not numeric");
  }
  return *value;
}

CsvTable read_csv_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingFile(path.string());
  }
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    auto cells = split_csv_line(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw MalformedRow(line_no, "expected " + std::to_string(table.header.size()) + " fields");
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

}  // namespace trader
