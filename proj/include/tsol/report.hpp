#pragma once

#include <string>
#include <vector>

#include "tsol/types.hpp"

namespace tsol {

inline constexpr const char* kToolVersion = "0.1.0";

// Writes via a temp file in the same directory, then renames.
void atomic_write_text(const std::string& path, const std::string& text);

std::string read_text_file(const std::string& path);

// Shortest-round-trip double formatting (17 significant digits).
std::string format_double(double x);

// RFC-4180: fields containing comma/quote/newline are quoted, quotes doubled.
std::string csv_escape(const std::string& field);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void add_row(const std::vector<std::string>& fields);
  void add_row(const std::vector<double>& fields);
  std::string str() const;
  void write(const std::string& path) const;

 private:
  std::size_t width_;
  std::string body_;
};

// FNV-1a 64-bit over the canonical config text.
std::string config_hash(const std::string& canonical_text);

// Minimal SVG line plot (log-log capable) for scan outputs.
void write_svg_line_plot(const std::string& path, const std::string& title,
                         const std::vector<double>& x,
                         const std::vector<std::vector<double>>& series,
                         const std::vector<std::string>& labels, bool loglog);

}  // namespace tsol
