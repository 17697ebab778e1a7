#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace rra {

// Shortest round-trip-safe text for a double: 17 significant digits, '.' decimal point.
std::string format_number(double v);

// Minimal CSV emitter with LF line endings and 17-digit numerics.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  CsvWriter& field(std::string_view text);
  CsvWriter& field(double v);
  CsvWriter& field(std::uint64_t v);
  CsvWriter& field(int v) { return field(static_cast<std::uint64_t>(v)); }
  CsvWriter& empty_field() { return field(std::string_view{}); }
  void end_row();

  void header(const std::vector<std::string>& names);

 private:
  void separator();

  std::ostream& os_;
  bool first_ = true;
};

// Splits one CSV line on commas (no quoting; the tables written here never quote).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace rra
