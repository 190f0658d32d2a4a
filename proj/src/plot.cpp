#include "tdv3/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tdv3 {

int MetricsTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

MetricsTable parse_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot open '" + path + "'");
  MetricsTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto cells = split_csv_line(line);
    if (line_no == 1) {
      table.columns = cells;
      if (table.columns.empty()) throw std::runtime_error("metrics: '" + path + "' line 1: empty header");
      continue;
    }
    if (cells.size() != table.columns.size()) {
      throw std::runtime_error("metrics: '" + path + "' line " + std::to_string(line_no) + ": expected " +
                               std::to_string(table.columns.size()) + " cells, got " +
                               std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      std::size_t used = 0;
      try {
        row[i] = std::stod(cells[i], &used);
      } catch (const std::exception&) {
        used = std::string::npos;
      }
      if (used != cells[i].size()) {
        throw std::runtime_error("metrics: '" + path + "' line " + std::to_string(line_no) +
                                 ": non-numeric cell '" + cells[i] + "'");
      }
    }
    table.rows.push_back(std::move(row));
  }
  if (table.columns.empty()) throw std::runtime_error("metrics: '" + path + "' is empty");
  return table;
}

std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 400;
  constexpr double ml = 64, mr = 20, mt = 34, mb = 44;
  const double plot_w = W - ml - mr, plot_h = H - mt - mb;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  constexpr int kNColors = 6;

  bool any = false;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: series x/y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        x_min = x_max = s.x[i];
        y_min = y_max = s.y[i];
        any = true;
      } else {
        x_min = std::min(x_min, s.x[i]);
        x_max = std::max(x_max, s.x[i]);
        y_min = std::min(y_min, s.y[i]);
        y_max = std::max(y_max, s.y[i]);
      }
    }
  }
  if (x_max - x_min < 1e-12) {
    x_min -= 0.5;
    x_max += 0.5;
  }
  if (y_max - y_min < 1e-12) {
    y_min -= 0.5;
    y_max += 0.5;
  }
  const auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * plot_w; };
  const auto py = [&](double y) { return mt + plot_h - (y - y_min) / (y_max - y_min) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\""
      << mt + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x_min + (x_max - x_min) * i / 4.0;
    const double fy = y_min + (y_max - y_min) * i / 4.0;
    svg << "<text x=\"" << fmt2(px(fx)) << "\" y=\"" << mt + plot_h + 16
        << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(fx) << "</text>\n";
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << fmt2(py(fy) + 3)
        << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(fy) << "</text>\n";
  }
  svg << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << H - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">" << x_label << "</text>\n";

  int ci = 0;
  double legend_y = mt + 8;
  for (const auto& s : series) {
    const char* color = kColors[ci % kNColors];
    ++ci;
    if (!s.x.empty()) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (i) svg << ' ';
        svg << fmt2(px(s.x[i])) << ',' << fmt2(py(s.y[i]));
      }
      svg << "\"/>\n";
    }
    svg << "<line x1=\"" << ml + plot_w - 130 << "\" y1=\"" << fmt2(legend_y) << "\" x2=\""
        << ml + plot_w - 112 << "\" y2=\"" << fmt2(legend_y) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << ml + plot_w - 106 << "\" y=\"" << fmt2(legend_y + 4)
        << "\" font-size=\"11\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::string> emit_plots(const std::vector<std::string>& csv_paths,
                                    const std::string& out_dir) {
  if (csv_paths.empty()) throw std::invalid_argument("plot: no input files");
  std::vector<MetricsTable> tables;
  std::vector<std::string> labels;
  tables.reserve(csv_paths.size());
  for (const auto& p : csv_paths) {
    tables.push_back(parse_metrics_csv(p));
    labels.push_back(std::filesystem::path(p).stem().string());
  }
  std::filesystem::create_directories(out_dir);

  std::vector<std::string> written;
  const int x_col = tables[0].column_index("env_step");
  if (x_col < 0) throw std::runtime_error("plot: '" + csv_paths[0] + "' has no env_step column");
  for (std::size_t c = 0; c < tables[0].columns.size(); ++c) {
    const std::string& metric = tables[0].columns[c];
    if (metric == "env_step") continue;
    std::vector<PlotSeries> series;
    for (std::size_t f = 0; f < tables.size(); ++f) {
      const int yc = tables[f].column_index(metric);
      const int xc = tables[f].column_index("env_step");
      if (yc < 0 || xc < 0) continue;
      PlotSeries s;
      s.label = labels[f];
      for (const auto& row : tables[f].rows) {
        s.x.push_back(row[static_cast<std::size_t>(xc)]);
        s.y.push_back(row[static_cast<std::size_t>(yc)]);
      }
      series.push_back(std::move(s));
    }
    const std::string path = (std::filesystem::path(out_dir) / (metric + ".svg")).string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("plot: cannot write '" + path + "'");
    out << render_line_plot(metric, "env_step", series);
    written.push_back(path);
  }
  return written;
}

}  // namespace tdv3
