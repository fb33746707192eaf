#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coldrec::eval {

struct Pair {
  double predicted = 0.0;
  double actual = 0.0;
};

// sqrt(sum (p - a)^2 / n); ParameterError on an empty list.
double rmse(std::span<const Pair> pairs);
double sum_squared_error(std::span<const Pair> pairs);

struct Entry {
  std::string set;
  double rmse = 0.0;
  std::optional<double> variance;  // present iff the method is stochastic
  std::optional<double> stddev;
  std::size_t n = 0;
  bool operator==(const Entry&) const = default;
};

struct MethodRow {
  std::string method;
  bool baseline = false;
  std::vector<Entry> entries;  // per set, then the combined column
  bool operator==(const MethodRow&) const = default;
};

// rmse(baseline) - rmse(method) for one column.
struct Improvement {
  std::string method;
  std::string baseline;
  std::string set;
  double delta = 0.0;
  bool operator==(const Improvement&) const = default;
};

struct EvalReport {
  std::vector<std::string> sets;  // column order, combined last when present
  std::vector<MethodRow> rows;
  std::vector<Improvement> improvements;
  std::map<std::string, std::string> metadata;
  bool operator==(const EvalReport&) const = default;
};

struct SetResult {
  std::string set;
  double rmse = 0.0;
  std::size_t n = 0;
  std::optional<double> variance;  // across-trial variance for stochastic methods
};

struct MethodResult {
  std::string method;
  bool stochastic = false;
  bool baseline = false;
  std::vector<SetResult> sets;
  // Across-trial variance of the pooled per-trial RMSE; stochastic methods
  // with two or more sets only.
  std::optional<double> combined_variance;
};

// Name of the combined column for the given set names, e.g. "test1+test2".
std::string combined_name(std::span<const std::string> sets);

// One row per method. With two or more sets a combined column is added whose
// RMSE pools squared errors: sqrt(sum_s rmse_s^2 n_s / sum_s n_s). Every
// non-baseline method gets an improvement delta against every baseline.
EvalReport build_report(std::span<const MethodResult> results,
                        std::map<std::string, std::string> metadata = {});

// Largest |combined^2 (n_1 + ...) - sum rmse_s^2 n_s| over all rows.
double combined_identity_residual(const EvalReport& report);

// `method,set,rmse,variance,n`
std::string to_csv(const EvalReport& report);
// Aligned text table; stochastic cells show mean ± variance and the stddev.
std::string to_table(const EvalReport& report);
std::string to_json(const EvalReport& report);
EvalReport from_json(const std::string& text);

}  // namespace coldrec::eval
