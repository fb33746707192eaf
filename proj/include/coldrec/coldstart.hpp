#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "coldrec/convnet.hpp"
#include "coldrec/corpus.hpp"
#include "coldrec/rng.hpp"
#include "coldrec/svdpp.hpp"
#include "coldrec/textprep.hpp"

namespace coldrec::coldstart {

// Extrema of the trained item factors, over the whole table and per column.
struct FactorBounds {
  double global_min = 0.0;
  double global_max = 0.0;
  std::vector<double> col_min;
  std::vector<double> col_max;
};

// Throws ParameterError when the model has no items.
FactorBounds compute_bounds(const svdpp::MfModel& model);

// Every component uniform in [global_min, global_max].
std::vector<double> random1_factors(const FactorBounds& bounds, Rng& rng);
// Component j uniform in [col_min[j], col_max[j]].
std::vector<double> random2_factors(const FactorBounds& bounds, Rng& rng);

enum class SourceKind { cnn, random1, random2, oracle };

std::string_view to_string(SourceKind kind);
SourceKind parse_source_kind(std::string_view name);  // ParameterError if unknown

struct CnnSource {
  const convnet::CnnModel* model = nullptr;
};
struct Random1Source {
  FactorBounds bounds;
};
struct Random2Source {
  FactorBounds bounds;
};
// Factorization over data that includes the test businesses.
struct OracleSource {
  const svdpp::MfModel* full = nullptr;
};

using FactorSource = std::variant<CnnSource, Random1Source, Random2Source, OracleSource>;

SourceKind kind_of(const FactorSource& source);

using DocMap = std::map<std::string, textprep::TokenizedDoc, std::less<>>;

struct RatedReview {
  std::size_t position = 0;  // index into the test set
  double predicted = 0.0;
  double actual = 0.0;
};

// Rates every review of `test`. Cold businesses get one factor vector each
// (random kinds draw per business in order of first appearance) and item
// bias 0; predictions use the user side of `mf`. The oracle kind predicts
// entirely from the full-data model. NotFoundError lists businesses lacking a
// description (cnn) or factors (oracle).
std::vector<RatedReview> rate_test_set(const corpus::ReviewSet& test, const svdpp::MfModel& mf,
                                       const FactorSource& source, const DocMap& descriptions,
                                       Rng& rng, bool clamp = true);

double rated_rmse(std::span<const RatedReview> rated);

struct TrialStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  double stddev = 0.0;
  std::vector<double> rmses;  // per trial
};

struct BaselineTrials {
  std::vector<TrialStats> per_set;
  TrialStats combined;  // RMSE of the pooled squared errors per trial
};

// Generator seed for trial t on set s; trials are independent of each other
// and of the number of sets evaluated before s.
std::uint64_t trial_seed(std::uint64_t master, int trial, std::size_t set_index);

// n_runs independent draws of a random baseline (kind random1 or random2),
// with bounds computed from `mf`.
BaselineTrials run_baseline_trials(std::span<const corpus::ReviewSet* const> tests,
                                   const svdpp::MfModel& mf, SourceKind kind, int n_runs,
                                   std::uint64_t seed, bool clamp = true);
TrialStats run_baseline_trials(const corpus::ReviewSet& test, const svdpp::MfModel& mf,
                               SourceKind kind, int n_runs, std::uint64_t seed,
                               bool clamp = true);

// CSV with header `trial,rmse`.
void write_trials_csv(std::span<const double> rmses, const std::filesystem::path& path);

}  // namespace coldrec::coldstart
