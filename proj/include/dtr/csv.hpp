#ifndef DTR_CSV_HPP
#define DTR_CSV_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dtr {

/// Shortest round-trip decimal form ("NA" for NaN), independent of locale.
std::string format_number(double value);
std::string format_number(std::optional<double> value);

/// Locale-independent strict parse; the whole field must be consumed.
std::optional<double> parse_number(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

/// Comma-separated with double-quote quoting. Blank lines and lines whose
/// first character is '#' are skipped. Throws kData on ragged rows.
CsvTable read_csv(std::istream& in);

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  CsvWriter& field(std::string_view text);
  CsvWriter& field(double value) { return field(format_number(value)); }
  CsvWriter& field(std::optional<double> value) { return field(format_number(value)); }
  CsvWriter& field(std::size_t value) { return field(std::to_string(value)); }
  void end_row();
  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
  bool first_ = true;
};

}  // namespace dtr

#endif  // DTR_CSV_HPP
