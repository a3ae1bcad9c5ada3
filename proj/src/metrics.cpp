#include "dtkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

namespace dtkd {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < k; ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k; ++j) s += at(actual, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k; ++i) s += at(i, predicted);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                 std::size_t k) {
  require(preds.size() == labels.size(), ErrorKind::ShapeMismatch, "prediction and label counts differ");
  require(k > 0, ErrorKind::InvalidConfig, "confusion matrix needs at least one class");
  ConfusionMatrix cm{k, std::vector<std::uint64_t>(k * k, 0)};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i] < k && labels[i] < k, ErrorKind::IndexOutOfRange,
            "class index outside [0, " + std::to_string(k) + ") at sample " + std::to_string(i));
    ++cm.counts[labels[i] * k + preds[i]];
  }
  return cm;
}

namespace {
double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace

MetricsReport metrics_from_cm(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  require(total > 0, ErrorKind::EmptyMatrix, "confusion matrix holds no samples");
  MetricsReport r;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t c = 0; c < cm.k; ++c) {
    const auto tp = static_cast<double>(cm.at(c, c));
    ClassMetrics m;
    m.precision = ratio(tp, static_cast<double>(cm.col_sum(c)));
    m.recall = ratio(tp, static_cast<double>(cm.row_sum(c)));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.per_class.push_back(m);
  }
  const auto k = static_cast<double>(cm.k);
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  return r;
}

double error_decrement_percent(double tp1, double tp2, double n) {
  require(n != tp1, ErrorKind::DivisionByZero, "class has no baseline errors to decrease");
  return (tp2 - tp1) / (n - tp1) * 100.0;
}

TpChangeTable tp_change_table(std::span<const double> tp1, std::span<const double> tp2,
                              std::span<const double> n_per_class, const std::vector<std::string>& names) {
  require(tp1.size() == tp2.size() && tp1.size() == n_per_class.size() && tp1.size() == names.size(),
          ErrorKind::ShapeMismatch, "true-positive columns differ in length");
  require(!tp1.empty(), ErrorKind::EmptyMatrix, "no classes to tabulate");
  TpChangeTable t;
  t.mean.name = "mean";
  double dec_sum = 0.0;
  std::size_t dec_count = 0;
  for (std::size_t i = 0; i < tp1.size(); ++i) {
    TpChangeRow row{names[i], tp1[i], tp2[i], tp2[i] - tp1[i], std::nullopt};
    if (tp1[i] != n_per_class[i]) {
      row.error_decrement = error_decrement_percent(tp1[i], tp2[i], n_per_class[i]);
      dec_sum += *row.error_decrement;
      ++dec_count;
    }
    t.mean.tp1 += row.tp1;
    t.mean.tp2 += row.tp2;
    t.mean.delta += row.delta;
    t.rows.push_back(std::move(row));
  }
  const auto n = static_cast<double>(tp1.size());
  t.mean.tp1 /= n;
  t.mean.tp2 /= n;
  t.mean.delta /= n;
  if (dec_count > 0) t.mean.error_decrement = dec_sum / static_cast<double>(dec_count);
  return t;
}

TpChangeTable tp_change_table(const ConfusionMatrix& cm_tl, const ConfusionMatrix& cm_kd,
                              const std::vector<std::string>& names) {
  require(cm_tl.k == cm_kd.k, ErrorKind::ShapeMismatch, "confusion matrices differ in class count");
  std::vector<double> tp1, tp2, n;
  for (std::size_t c = 0; c < cm_tl.k; ++c) {
    require(cm_tl.row_sum(c) == cm_kd.row_sum(c), ErrorKind::ShapeMismatch,
            "class " + std::to_string(c) + " has different totals in the two matrices");
    tp1.push_back(static_cast<double>(cm_tl.at(c, c)));
    tp2.push_back(static_cast<double>(cm_kd.at(c, c)));
    n.push_back(static_cast<double>(cm_tl.row_sum(c)));
  }
  return tp_change_table(tp1, tp2, n, names);
}

WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::ShapeMismatch, "paired samples differ in length");
  require(x.size() <= kWilcoxonMaxPairs, ErrorKind::TooLong,
          "exact test supports at most " + std::to_string(kWilcoxonMaxPairs) + " pairs");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  require(!d.empty(), ErrorKind::AllZeroDifferences, "every paired difference is zero");
  const std::size_t n = d.size();

  // Ranks are doubled so mid-ranks of ties stay integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<std::uint64_t> rank2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = i + j + 2;  // 2 * mean of 1-based ranks i+1..j+1
    i = j + 1;
  }
  std::uint64_t plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0) plus2 += rank2[i];
  }
  const std::uint64_t observed2 = std::min(plus2, total2 - plus2);

  // ways[s] = number of sign assignments whose positive doubled-rank sum is s.
  std::vector<double> ways(total2 + 1, 0.0);
  ways[0] = 1.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::uint64_t s = total2; s + 1 > rank2[i]; --s) ways[s] += ways[s - rank2[i]];
  double extreme = 0.0;
  for (std::uint64_t s = 0; s <= total2; ++s)
    if (std::min(s, total2 - s) <= observed2) extreme += ways[s];

  WilcoxonResult r;
  r.n_used = n;
  r.w_plus = static_cast<double>(plus2) / 2.0;
  r.w_minus = static_cast<double>(total2 - plus2) / 2.0;
  r.statistic = static_cast<double>(observed2) / 2.0;
  r.p_value = std::min(1.0, extreme / std::ldexp(1.0, static_cast<int>(n)));
  return r;
}

double mean(std::span<const double> values) {
  require(!values.empty(), ErrorKind::EmptySet, "mean of no values");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  require(names.size() == cm.k, ErrorKind::ShapeMismatch, "class name count differs from matrix size");
  std::string out = "actual\\predicted";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (std::size_t i = 0; i < cm.k; ++i) {
    out += names[i];
    for (std::size_t j = 0; j < cm.k; ++j) out += "," + std::to_string(cm.at(i, j));
    out += "\n";
  }
  return out;
}

std::string metrics_json(const MetricsReport& report, const std::vector<std::string>& names) {
  require(names.size() == report.per_class.size(), ErrorKind::ShapeMismatch, "class name count differs from report");
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["macro_precision"] = report.macro_precision;
  j["macro_recall"] = report.macro_recall;
  j["macro_f1"] = report.macro_f1;
  j["averaging"] = "macro";
  nlohmann::ordered_json classes = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < names.size(); ++c)
    classes[names[c]] = {{"precision", report.per_class[c].precision},
                         {"recall", report.per_class[c].recall},
                         {"f1", report.per_class[c].f1}};
  j["per_class"] = classes;
  return j.dump(2) + "\n";
}

std::string tp_change_csv(const TpChangeTable& table) {
  std::string out = "class,tp1,tp2,delta,error_decrement_percent\n";
  char line[256];
  auto emit = [&](const TpChangeRow& r) {
    const std::string dec = r.error_decrement ? std::to_string(*r.error_decrement) : "n/a";
    std::snprintf(line, sizeof line, "%s,%.10g,%.10g,%.10g,%s\n", r.name.c_str(), r.tp1, r.tp2, r.delta, dec.c_str());
    out += line;
  };
  for (const auto& r : table.rows) emit(r);
  emit(table.mean);
  return out;
}

}  // namespace dtkd
