#pragma once

// Minimal standalone SVG line plots for the eval CSVs. Presentation only; no
// numeric authority lives here.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ngo {

class PlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

constexpr int kPlotW = 720;
constexpr int kPlotH = 480;
constexpr int kMargin = 48;

inline const char* series_color(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

}  // namespace detail

// Writes a line plot; an empty series list renders empty axes.
inline void write_svg_plot(const std::string& path, const std::vector<PlotSeries>& series,
                           const std::string& title = "") {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  const bool empty = !(xmin <= xmax);
  if (empty) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;

  const int w = detail::kPlotW, h = detail::kPlotH, m = detail::kMargin;
  auto sx = [&](double x) { return m + (x - xmin) / (xmax - xmin) * (w - 2 * m); };
  auto sy = [&](double y) { return h - m - (y - ymin) / (ymax - ymin) * (h - 2 * m); };

  std::ofstream os(path);
  if (!os) throw PlotError("cannot write figure: " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n";
  if (!title.empty())
    os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
       << "</text>\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", xmin);
  os << "<text x=\"" << m << "\" y=\"" << h - m + 20 << "\" font-size=\"12\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.4g", xmax);
  os << "<text x=\"" << w - m << "\" y=\"" << h - m + 20 << "\" text-anchor=\"end\" font-size=\"12\">"
     << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.4g", ymin);
  os << "<text x=\"" << m - 6 << "\" y=\"" << h - m << "\" text-anchor=\"end\" font-size=\"12\">"
     << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.4g", ymax);
  os << "<text x=\"" << m - 6 << "\" y=\"" << m + 4 << "\" text-anchor=\"end\" font-size=\"12\">"
     << buf << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.x.empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << detail::series_color(si) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", sx(s.x[i]), sy(s.y[i]));
      os << buf;
    }
    os << "\"/>\n";
    os << "<text x=\"" << w - m + 4 << "\" y=\"" << m + 16 * static_cast<int>(si)
       << "\" font-size=\"12\" fill=\"" << detail::series_color(si) << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw PlotError("write failed: " + path);
}

// Parses a CSV with a header row into named numeric columns. Raises with the
// offending line number on malformed input.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw PlotError("cannot open series file: " + path);
  CsvTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    if (lineno == 1) {
      while (std::getline(ss, cell, ',')) table.header.push_back(cell);
      table.columns.resize(table.header.size());
      continue;
    }
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= table.columns.size())
        throw PlotError(path + ":" + std::to_string(lineno) + ": more cells than header columns");
      try {
        std::size_t pos = 0;
        const double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument("trailing");
        table.columns[col].push_back(v);
      } catch (const std::exception&) {
        throw PlotError(path + ":" + std::to_string(lineno) + ": cell '" + cell + "' is not a number");
      }
      ++col;
    }
    if (col != table.columns.size())
      throw PlotError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(table.columns.size()) + " cells, got " + std::to_string(col));
  }
  if (table.header.empty()) table.columns.clear();
  return table;
}

}  // namespace ngo
