#include "coldrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "coldrec/error.hpp"
#include "coldrec/format.hpp"

namespace coldrec::eval {

using nlohmann::json;

double sum_squared_error(std::span<const Pair> pairs) {
  double sse = 0.0;
  for (const auto& p : pairs) {
    const double d = p.predicted - p.actual;
    sse += d * d;
  }
  return sse;
}

double rmse(std::span<const Pair> pairs) {
  if (pairs.empty()) throw ParameterError("RMSE of an empty list");
  return std::sqrt(sum_squared_error(pairs) / static_cast<double>(pairs.size()));
}

std::string combined_name(std::span<const std::string> sets) {
  std::string out;
  for (const auto& s : sets) {
    if (!out.empty()) out += '+';
    out += s;
  }
  return out;
}

EvalReport build_report(std::span<const MethodResult> results,
                        std::map<std::string, std::string> metadata) {
  if (results.empty()) throw ParameterError("report needs at least one method");
  EvalReport report;
  report.metadata = std::move(metadata);

  for (const auto& r : results) {
    for (const auto& s : r.sets) {
      if (std::find(report.sets.begin(), report.sets.end(), s.set) == report.sets.end()) {
        report.sets.push_back(s.set);
      }
    }
  }
  std::vector<std::string> base_sets = report.sets;
  const bool with_combined = base_sets.size() >= 2;
  const auto combined = combined_name(base_sets);
  if (with_combined) report.sets.push_back(combined);

  for (const auto& r : results) {
    MethodRow row{r.method, r.baseline, {}};
    double pooled_sse = 0.0;
    std::size_t pooled_n = 0;
    for (const auto& name : base_sets) {
      auto it = std::find_if(r.sets.begin(), r.sets.end(),
                             [&](const SetResult& s) { return s.set == name; });
      if (it == r.sets.end()) {
        throw ParameterError("method '" + r.method + "' has no result for set '" + name + "'");
      }
      if (it->n == 0) throw ParameterError("result for '" + r.method + "/" + name + "' has n = 0");
      if (r.stochastic != it->variance.has_value()) {
        throw ParameterError("variance must be present exactly for stochastic methods");
      }
      Entry e{name, it->rmse, it->variance, std::nullopt, it->n};
      if (e.variance) e.stddev = std::sqrt(*e.variance);
      row.entries.push_back(e);
      pooled_sse += it->rmse * it->rmse * static_cast<double>(it->n);
      pooled_n += it->n;
    }
    if (with_combined) {
      Entry e{combined, std::sqrt(pooled_sse / static_cast<double>(pooled_n)), std::nullopt,
              std::nullopt, pooled_n};
      if (r.stochastic) {
        if (!r.combined_variance) {
          throw ParameterError("stochastic method '" + r.method + "' lacks a combined variance");
        }
        e.variance = r.combined_variance;
        e.stddev = std::sqrt(*r.combined_variance);
      }
      row.entries.push_back(e);
    }
    report.rows.push_back(std::move(row));
  }

  for (const auto& m : report.rows) {
    if (m.baseline) continue;
    for (const auto& b : report.rows) {
      if (!b.baseline) continue;
      for (std::size_t c = 0; c < report.sets.size(); ++c) {
        report.improvements.push_back(
            {m.method, b.method, report.sets[c], b.entries[c].rmse - m.entries[c].rmse});
      }
    }
  }
  return report;
}

double combined_identity_residual(const EvalReport& report) {
  double worst = 0.0;
  if (report.sets.size() < 3) return worst;  // no combined column
  for (const auto& row : report.rows) {
    const auto& total = row.entries.back();
    double rhs = 0.0;
    for (std::size_t c = 0; c + 1 < row.entries.size(); ++c) {
      const auto& e = row.entries[c];
      rhs += e.rmse * e.rmse * static_cast<double>(e.n);
    }
    const double lhs = total.rmse * total.rmse * static_cast<double>(total.n);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "method,set,rmse,variance,n\n";
  for (const auto& row : report.rows) {
    for (const auto& e : row.entries) {
      out << row.method << ',' << e.set << ',' << format_real(e.rmse) << ','
          << (e.variance ? format_real(*e.variance) : std::string()) << ',' << e.n << '\n';
    }
  }
  return out.str();
}

std::string to_table(const EvalReport& report) {
  auto cell = [](const Entry& e) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << e.rmse;
    if (e.variance) {
      s << " ± " << std::scientific << std::setprecision(1) << *e.variance << " (sd "
        << std::fixed << std::setprecision(4) << *e.stddev << ")";
    }
    return s.str();
  };
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"method"});
  for (const auto& s : report.sets) grid.back().push_back(s);
  for (const auto& row : report.rows) {
    grid.push_back({row.method});
    for (const auto& e : row.entries) grid.back().push_back(cell(e));
  }
  // "±" is two bytes but one column wide.
  auto width = [](const std::string& s) {
    return s.size() - static_cast<std::size_t>(std::count(s.begin(), s.end(), '\xc2'));
  };
  std::vector<std::size_t> widths(grid.front().size(), 0);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t c = 0; c < grid[r].size(); ++c) {
      const auto& s = grid[r][c];
      out << (c ? "  " : "") << s << std::string(widths[c] - width(s), ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      out << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  if (!report.improvements.empty()) {
    out << "\nimprovement over baselines (baseline rmse - method rmse)\n";
    for (const auto& imp : report.improvements) {
      out << "  " << imp.method << " vs " << imp.baseline << " [" << imp.set << "]: " << std::fixed
          << std::setprecision(4) << imp.delta << '\n';
    }
  }
  return out.str();
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string to_json(const EvalReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json entries = json::array();
    for (const auto& e : row.entries) {
      entries.push_back({{"set", e.set},
                         {"rmse", e.rmse},
                         {"variance", optional_number(e.variance)},
                         {"stddev", optional_number(e.stddev)},
                         {"n", e.n}});
    }
    rows.push_back({{"method", row.method}, {"baseline", row.baseline}, {"entries", entries}});
  }
  json improvements = json::array();
  for (const auto& i : report.improvements) {
    improvements.push_back(
        {{"method", i.method}, {"baseline", i.baseline}, {"set", i.set}, {"delta", i.delta}});
  }
  json out{{"sets", report.sets},
           {"rows", rows},
           {"improvements", improvements},
           {"metadata", report.metadata}};
  return out.dump(2) + "\n";
}

EvalReport from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EvalReport report;
    report.sets = j.at("sets").get<std::vector<std::string>>();
    for (const auto& r : j.at("rows")) {
      MethodRow row{r.at("method").get<std::string>(), r.at("baseline").get<bool>(), {}};
      for (const auto& e : r.at("entries")) {
        row.entries.push_back({e.at("set").get<std::string>(), e.at("rmse").get<double>(),
                               read_optional(e.at("variance")), read_optional(e.at("stddev")),
                               e.at("n").get<std::size_t>()});
      }
      report.rows.push_back(std::move(row));
    }
    for (const auto& i : j.at("improvements")) {
      report.improvements.push_back({i.at("method").get<std::string>(),
                                     i.at("baseline").get<std::string>(),
                                     i.at("set").get<std::string>(), i.at("delta").get<double>()});
    }
    report.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return report;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad report JSON: ") + e.what());
  }
}

}  // namespace coldrec::eval
