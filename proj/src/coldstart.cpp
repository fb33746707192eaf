#include "coldrec/coldstart.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "coldrec/error.hpp"
#include "coldrec/format.hpp"

namespace coldrec::coldstart {

FactorBounds compute_bounds(const svdpp::MfModel& model) {
  if (model.item_count() == 0) throw ParameterError("factor bounds need at least one item");
  const auto k = static_cast<std::size_t>(model.k());
  FactorBounds b;
  b.col_min.assign(k, std::numeric_limits<double>::infinity());
  b.col_max.assign(k, -std::numeric_limits<double>::infinity());
  for (std::uint32_t i = 0; i < model.item_count(); ++i) {
    const auto q = model.item_row(i);
    for (std::size_t f = 0; f < k; ++f) {
      b.col_min[f] = std::min(b.col_min[f], q[f]);
      b.col_max[f] = std::max(b.col_max[f], q[f]);
    }
  }
  b.global_min = *std::min_element(b.col_min.begin(), b.col_min.end());
  b.global_max = *std::max_element(b.col_max.begin(), b.col_max.end());
  return b;
}

std::vector<double> random1_factors(const FactorBounds& bounds, Rng& rng) {
  std::vector<double> v(bounds.col_min.size());
  for (auto& x : v) x = rng.uniform(bounds.global_min, bounds.global_max);
  return v;
}

std::vector<double> random2_factors(const FactorBounds& bounds, Rng& rng) {
  std::vector<double> v(bounds.col_min.size());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = rng.uniform(bounds.col_min[j], bounds.col_max[j]);
  return v;
}

std::string_view to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::cnn: return "cnn";
    case SourceKind::random1: return "random1";
    case SourceKind::random2: return "random2";
    case SourceKind::oracle: return "oracle";
  }
  return "unknown";
}

SourceKind parse_source_kind(std::string_view name) {
  for (auto k : {SourceKind::cnn, SourceKind::random1, SourceKind::random2, SourceKind::oracle}) {
    if (to_string(k) == name) return k;
  }
  throw ParameterError("unknown method '" + std::string(name) +
                       "' (expected cnn, random1, random2 or oracle)");
}

SourceKind kind_of(const FactorSource& source) {
  return static_cast<SourceKind>(source.index());
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void throw_missing(const std::string& what, const std::vector<std::string>& ids) {
  std::string msg = what + " for " + std::to_string(ids.size()) + " business(es):";
  for (const auto& id : ids) msg += " " + id;
  throw NotFoundError(msg);
}

}  // namespace

std::vector<RatedReview> rate_test_set(const corpus::ReviewSet& test, const svdpp::MfModel& mf,
                                       const FactorSource& source, const DocMap& descriptions,
                                       Rng& rng, bool clamp) {
  std::vector<RatedReview> out;
  out.reserve(test.size());

  if (const auto* oracle = std::get_if<OracleSource>(&source)) {
    if (!oracle->full) throw ParameterError("oracle source without a model");
    std::vector<std::string> missing;
    for (const auto& id : test.business_order()) {
      if (!oracle->full->find_item(id)) missing.push_back(id);
    }
    if (!missing.empty()) throw_missing("no full-data factors", missing);
    const auto predictions = svdpp::mf_predictions(*oracle->full, test, clamp);
    for (std::size_t n = 0; n < test.size(); ++n) out.push_back({n, predictions[n], test[n].stars});
    return out;
  }

  // One factor vector per cold business, in order of first appearance.
  std::map<std::string_view, std::vector<double>> factors;
  std::visit(Overloaded{
                 [&](const CnnSource& s) {
                   if (!s.model) throw ParameterError("cnn source without a model");
                   std::vector<std::string> missing;
                   for (const auto& id : test.business_order()) {
                     if (!descriptions.contains(id)) missing.push_back(id);
                   }
                   if (!missing.empty()) throw_missing("no description", missing);
                   for (const auto& id : test.business_order()) {
                     factors[id] = convnet::predict_factors(*s.model, descriptions.find(id)->second);
                   }
                 },
                 [&](const Random1Source& s) {
                   for (const auto& id : test.business_order()) factors[id] = random1_factors(s.bounds, rng);
                 },
                 [&](const Random2Source& s) {
                   for (const auto& id : test.business_order()) factors[id] = random2_factors(s.bounds, rng);
                 },
                 [](const OracleSource&) {},
             },
             source);

  const svdpp::RatingPredictor predictor(mf);
  for (std::size_t n = 0; n < test.size(); ++n) {
    const auto& r = test[n];
    const auto& q = factors.find(r.business_id)->second;
    out.push_back({n, predictor.predict(r.user_id, q, 0.0, clamp), r.stars});
  }
  return out;
}

double rated_rmse(std::span<const RatedReview> rated) {
  if (rated.empty()) throw ParameterError("RMSE of an empty rating list");
  double sse = 0.0;
  for (const auto& r : rated) sse += (r.predicted - r.actual) * (r.predicted - r.actual);
  return std::sqrt(sse / static_cast<double>(rated.size()));
}

std::uint64_t trial_seed(std::uint64_t master, int trial, std::size_t set_index) {
  return derive_seed(derive_seed(master, static_cast<std::uint64_t>(trial)), set_index);
}

namespace {

TrialStats summarize(std::vector<double> rmses) {
  TrialStats s;
  const auto n = static_cast<double>(rmses.size());
  double sum = 0.0;
  for (double r : rmses) sum += r;
  s.mean = sum / n;
  double sq = 0.0;
  for (double r : rmses) sq += (r - s.mean) * (r - s.mean);
  s.variance = sq / n;
  s.stddev = std::sqrt(s.variance);
  s.rmses = std::move(rmses);
  return s;
}

}  // namespace

BaselineTrials run_baseline_trials(std::span<const corpus::ReviewSet* const> tests,
                                   const svdpp::MfModel& mf, SourceKind kind, int n_runs,
                                   std::uint64_t seed, bool clamp) {
  if (n_runs < 1) throw ParameterError("n_runs must be >= 1");
  if (kind != SourceKind::random1 && kind != SourceKind::random2) {
    throw ParameterError("baseline trials need kind random1 or random2");
  }
  if (tests.empty()) throw ParameterError("baseline trials need at least one test set");
  const auto bounds = compute_bounds(mf);
  const FactorSource source =
      kind == SourceKind::random1 ? FactorSource(Random1Source{bounds}) : FactorSource(Random2Source{bounds});
  const DocMap no_docs;

  std::vector<std::vector<double>> per_set(tests.size());
  std::vector<double> combined;
  for (int t = 0; t < n_runs; ++t) {
    double pooled_sse = 0.0;
    std::size_t pooled_n = 0;
    for (std::size_t s = 0; s < tests.size(); ++s) {
      Rng rng(trial_seed(seed, t, s));
      const auto rated = rate_test_set(*tests[s], mf, source, no_docs, rng, clamp);
      const double r = rated_rmse(rated);
      per_set[s].push_back(r);
      pooled_sse += r * r * static_cast<double>(rated.size());
      pooled_n += rated.size();
    }
    combined.push_back(std::sqrt(pooled_sse / static_cast<double>(pooled_n)));
  }
  BaselineTrials out;
  for (auto& rmses : per_set) out.per_set.push_back(summarize(std::move(rmses)));
  out.combined = summarize(std::move(combined));
  return out;
}

TrialStats run_baseline_trials(const corpus::ReviewSet& test, const svdpp::MfModel& mf,
                               SourceKind kind, int n_runs, std::uint64_t seed, bool clamp) {
  const corpus::ReviewSet* one[] = {&test};
  return run_baseline_trials(one, mf, kind, n_runs, seed, clamp).per_set.front();
}

void write_trials_csv(std::span<const double> rmses, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write trials: " + path.string());
  out << "trial,rmse\n";
  for (std::size_t t = 0; t < rmses.size(); ++t) out << t << ',' << format_real(rmses[t]) << '\n';
}

}  // namespace coldrec::coldstart
