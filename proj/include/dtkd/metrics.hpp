#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtkd/error.hpp"

namespace dtkd {

/// K x K counts; rows are actual classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(std::size_t actual, std::size_t predicted) const { return counts.at(actual * k + predicted); }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t actual) const;
  std::uint64_t col_sum(std::size_t predicted) const;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                 std::size_t k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
};

/// Macro-averaged metrics; a ratio with a zero denominator counts as 0.
MetricsReport metrics_from_cm(const ConfusionMatrix& cm);

/// (tp2 - tp1) / (n - tp1) * 100. Throws DivisionByZero when tp1 == n.
double error_decrement_percent(double tp1, double tp2, double n);

struct TpChangeRow {
  std::string name;
  double tp1 = 0.0;
  double tp2 = 0.0;
  double delta = 0.0;
  std::optional<double> error_decrement;  // empty when not applicable
};

struct TpChangeTable {
  std::vector<TpChangeRow> rows;
  TpChangeRow mean;  // column means; the decrement mean skips inapplicable rows
};

TpChangeTable tp_change_table(std::span<const double> tp1, std::span<const double> tp2,
                              std::span<const double> n_per_class, const std::vector<std::string>& names);
/// Both matrices must hold the same per-class totals.
TpChangeTable tp_change_table(const ConfusionMatrix& cm_tl, const ConfusionMatrix& cm_kd,
                              const std::vector<std::string>& names);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;    // exact two-sided
  std::size_t n_used = 0;  // pairs left after dropping zero differences
};

inline constexpr std::size_t kWilcoxonMaxPairs = 25;

/// Exact paired signed-rank test. Zero differences are dropped, tied absolute
/// differences share their mean rank, and p counts the sign assignments whose
/// min(W+, W-) does not exceed the observed one.
WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> values);
/// Standard deviation with the n - 1 denominator; 0 for fewer than two values.
double sample_std(std::span<const double> values);

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names);
std::string metrics_json(const MetricsReport& report, const std::vector<std::string>& names);
std::string tp_change_csv(const TpChangeTable& table);

}  // namespace dtkd
