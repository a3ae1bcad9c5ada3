#pragma once

#include <string>
#include <vector>

namespace dtkd::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool zero_line = false;
};

/// Standalone SVG line chart with axes, ticks and a legend.
std::string line_plot_svg(const PlotSpec& spec);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a header column, or throws MalformedCSV.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

/// Header line plus numeric rows of equal width.
CsvTable parse_numeric_csv(const std::string& text);
CsvTable read_numeric_csv(const std::string& path);

/// epoch vs val_acc from a training history CSV.
Series history_series(const std::string& path, const std::string& label);

/// Accuracy per variant against the swept fraction and, when the summary has
/// an improvement column, the KD-minus-TL differences.
std::vector<PlotSpec> sweep_plots(const CsvTable& summary);

void write_svg(const std::string& path, const std::string& svg);

}  // namespace dtkd::cli
