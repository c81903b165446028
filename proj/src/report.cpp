#include "tsol/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tsol {

void atomic_write_text(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ComputationError("atomic_write_text: cannot open " + tmp.string());
    out << text;
  }
  fs::rename(tmp, target);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ComputationError("read_text_file: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : width_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) body_ += ',';
    body_ += csv_escape(header[i]);
  }
  body_ += "\r\n";
}

void CsvWriter::add_row(const std::vector<std::string>& fields) {
  if (fields.size() != width_)
    throw ComputationError("CsvWriter: row width mismatch");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) body_ += ',';
    body_ += csv_escape(fields[i]);
  }
  body_ += "\r\n";
}

void CsvWriter::add_row(const std::vector<double>& fields) {
  std::vector<std::string> s;
  s.reserve(fields.size());
  for (double x : fields) s.push_back(format_double(x));
  add_row(s);
}

std::string CsvWriter::str() const { return body_; }

void CsvWriter::write(const std::string& path) const {
  atomic_write_text(path, body_);
}

std::string config_hash(const std::string& canonical_text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical_text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_svg_line_plot(const std::string& path, const std::string& title,
                         const std::vector<double>& x,
                         const std::vector<std::vector<double>>& series,
                         const std::vector<std::string>& labels, bool loglog) {
  const int W = 640, H = 440, ML = 70, MR = 20, MT = 40, MB = 50;
  auto tx = [&](double v) { return loglog ? std::log10(std::max(v, 1e-300)) : v; };
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (double v : x) {
    xmin = std::min(xmin, tx(v));
    xmax = std::max(xmax, tx(v));
  }
  for (const auto& s : series)
    for (double v : s) {
      ymin = std::min(ymin, tx(v));
      ymax = std::max(ymax, tx(v));
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  auto px = [&](double v) {
    return ML + (W - ML - MR) * (tx(v) - xmin) / (xmax - xmin);
  };
  auto py = [&](double v) {
    return H - MB - (H - MT - MB) * (tx(v) - ymin) / (ymax - ymin);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b"};
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='"
      << H << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  svg << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15'>"
      << title << "</text>\n";
  svg << "<line x1='" << ML << "' y1='" << H - MB << "' x2='" << W - MR
      << "' y2='" << H - MB << "' stroke='black'/>\n";
  svg << "<line x1='" << ML << "' y1='" << MT << "' x2='" << ML << "' y2='"
      << H - MB << "' stroke='black'/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    svg << "<polyline fill='none' stroke='" << colors[s % 6]
        << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < x.size() && i < series[s].size(); ++i)
      svg << px(x[i]) << ',' << py(series[s][i]) << ' ';
    svg << "'/>\n";
    if (s < labels.size())
      svg << "<text x='" << W - MR - 150 << "' y='" << MT + 16 * (s + 1)
          << "' font-size='12' fill='" << colors[s % 6] << "'>" << labels[s]
          << "</text>\n";
  }
  svg << "</svg>\n";
  atomic_write_text(path, svg.str());
}

}  // namespace tsol
