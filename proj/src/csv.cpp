#include "rra/csv.hpp"

#include <cstdio>

namespace rra {

std::string format_number(double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

void CsvWriter::separator() {
  if (!first_) os_.put(',');
  first_ = false;
}

CsvWriter& CsvWriter::field(std::string_view text) {
  separator();
  os_ << text;
  return *this;
}

CsvWriter& CsvWriter::field(double v) {
  separator();
  os_ << format_number(v);
  return *this;
}

CsvWriter& CsvWriter::field(std::uint64_t v) {
  separator();
  os_ << v;
  return *this;
}

void CsvWriter::end_row() {
  os_.put('\n');
  first_ = true;
}

void CsvWriter::header(const std::vector<std::string>& names) {
  for (const auto& n : names) field(std::string_view(n));
  end_row();
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace rra
