#pragma once

// Metrics CSV parsing and minimal SVG learning-curve rendering. One SVG per
// metric column; several CSVs overlay as labeled series against env_step.

#include <string>
#include <vector>

namespace tdv3 {

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // parsed numeric cells, row-major

  int column_index(const std::string& name) const;  // -1 when absent
};

// Malformed rows raise errors naming the path and 1-based line number.
MetricsTable parse_metrics_csv(const std::string& path);

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

// Self-contained SVG document; series render as polylines with a legend.
// Series without points contribute nothing but axes still render.
std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::vector<PlotSeries>& series);

// Writes <metric>.svg into out_dir for every non-env_step column of the first
// CSV, overlaying one series per input CSV (labeled by file stem). Returns the
// paths written.
std::vector<std::string> emit_plots(const std::vector<std::string>& csv_paths,
                                    const std::string& out_dir);

}  // namespace tdv3
