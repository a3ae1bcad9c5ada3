#include "plots.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dtkd/error.hpp"

namespace dtkd::cli {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo, hi, step;
};

Axis nice_axis(double lo, double hi) {
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::string line_plot_svg(const PlotSpec& spec) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : spec.series) {
    require(s.x.size() == s.y.size(), ErrorKind::MalformedCSV, "series '" + s.label + "' has unequal x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  require(std::isfinite(xmin) && std::isfinite(ymin), ErrorKind::MalformedCSV, "nothing to plot");
  if (spec.zero_line) {
    ymin = std::min(ymin, 0.0);
    ymax = std::max(ymax, 0.0);
  }
  const Axis ax = nice_axis(xmin, xmax), ay = nice_axis(ymin, ymax);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - ay.lo) / (ay.hi - ay.lo) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                    num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(spec.title) + "</text>\n";
  for (double t = ax.lo; t <= ax.hi + ax.step / 2; t += ax.step) {
    svg += "<line x1=\"" + num(px(t)) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(px(t)) + "\" y2=\"" +
           num(kTop + ph) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + num(px(t)) + "\" y=\"" + num(kTop + ph + 18) + "\" text-anchor=\"middle\">" +
           tick_label(t) + "</text>\n";
  }
  for (double t = ay.lo; t <= ay.hi + ay.step / 2; t += ay.step) {
    svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(py(t)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
           num(py(t)) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(py(t) + 4) + "\" text-anchor=\"end\">" + tick_label(t) +
           "</text>\n";
  }
  svg += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  if (spec.zero_line)
    svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(py(0)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
           num(py(0)) + "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
  svg += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 12) + "\" text-anchor=\"middle\">" +
         escape(spec.x_label) + "</text>\n";
  svg += "<text transform=\"translate(18 " + num(kTop + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(spec.y_label) + "</text>\n";

  for (std::size_t s = 0; s < spec.series.size(); ++s) {
    const auto& series = spec.series[s];
    const std::string colour = kColours[s % std::size(kColours)];
    std::string points;
    for (std::size_t i = 0; i < series.x.size(); ++i)
      points += (i ? " " : "") + num(px(series.x[i])) + "," + num(py(series.y[i]));
    svg += "<polyline fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    const double ly = kTop + 10 + 20.0 * static_cast<double>(s);
    svg += "<line x1=\"" + num(kLeft + pw + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(kLeft + pw + 36) +
           "\" y2=\"" + num(ly) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(kLeft + pw + 42) + "\" y=\"" + num(ly + 4) + "\">" + escape(series.label) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  require(it != header.end(), ErrorKind::MalformedCSV, "missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool CsvTable::has_column(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable parse_numeric_csv(const std::string& text) {
  CsvTable t;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    require(cells.size() == t.header.size(), ErrorKind::MalformedCSV,
            "line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " cells, expected " +
                std::to_string(t.header.size()));
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = 0;
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      require(ec == std::errc{} && ptr == c.data() + c.size() && !c.empty(), ErrorKind::MalformedCSV,
              "line " + std::to_string(line_no) + ": '" + c + "' is not a number");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  require(!t.header.empty(), ErrorKind::MalformedCSV, "CSV has no header");
  return t;
}

CsvTable read_numeric_csv(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_numeric_csv(ss.str());
}

Series history_series(const std::string& path, const std::string& label) {
  const CsvTable t = read_numeric_csv(path);
  require(!t.rows.empty(), ErrorKind::MalformedCSV, path + " holds no epochs");
  const std::size_t e = t.column("epoch"), a = t.column("val_acc");
  Series s{label, {}, {}};
  for (const auto& row : t.rows) {
    s.x.push_back(row[e]);
    s.y.push_back(row[a]);
  }
  return s;
}

std::vector<PlotSpec> sweep_plots(const CsvTable& summary) {
  require(!summary.rows.empty(), ErrorKind::MalformedCSV, "sweep summary holds no rows");
  const std::vector<std::string> params = {"train_fraction", "label_noise_fraction", "image_noise_train_fraction"};
  std::string swept = params.back();
  for (const auto& p : params) {
    const std::size_t c = summary.column(p);
    const bool varies = std::any_of(summary.rows.begin(), summary.rows.end(),
                                    [&](const auto& r) { return r[c] != summary.rows.front()[c]; });
    if (varies) {
      swept = p;
      break;
    }
  }
  const std::size_t xc = summary.column(swept);
  auto series = [&](const std::string& column, const std::string& label) {
    Series s{label, {}, {}};
    const std::size_t c = summary.column(column);
    for (const auto& r : summary.rows) {
      s.x.push_back(r[xc]);
      s.y.push_back(r[c]);
    }
    return s;
  };
  std::vector<PlotSpec> plots;
  PlotSpec acc{"Final validation accuracy", swept, "validation accuracy", {series("tl_mean", "TL")}};
  if (summary.has_column("kd_mean")) acc.series.push_back(series("kd_mean", "TL+KD"));
  plots.push_back(acc);
  if (summary.has_column("improvement"))
    plots.push_back({"Accuracy improvement of TL+KD over TL", swept, "accuracy difference",
                     {series("improvement", "TL+KD - TL")}, true});
  return plots;
}

void write_svg(const std::string& path, const std::string& svg) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f << svg;
}

}  // namespace dtkd::cli
