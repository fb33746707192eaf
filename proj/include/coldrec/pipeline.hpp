#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "coldrec/convnet.hpp"
#include "coldrec/corpus.hpp"
#include "coldrec/eval.hpp"
#include "coldrec/kvconfig.hpp"
#include "coldrec/svdpp.hpp"
#include "coldrec/textprep.hpp"

namespace coldrec::pipeline {

// Effective settings of a pipeline run. See README for the key reference.
struct PipelineConfig {
  std::filesystem::path reviews;
  std::filesystem::path embeddings;
  std::filesystem::path workdir = "coldrec-work";
  std::uint64_t seed = 0;

  corpus::LoadOptions load;
  corpus::SplitParams split;
  bool split_jsonl = false;  // also write the split review subsets as JSON lines

  svdpp::MfHyper mf;
  bool train_full_mf = true;  // needed by the oracle method

  textprep::PrepareOptions prep;
  convnet::CnnConfig cnn;  // output_dim always follows mf.k

  int baseline_runs = 100;
  std::vector<std::string> methods{"random1", "random2", "cnn", "oracle"};
  bool clamp = true;

  // Relative paths resolve against `base_dir`. Unknown keys and bad values
  // throw ParameterError; a missing reviews file throws IoError.
  static PipelineConfig from_kv(const KeyValues& kv, const std::filesystem::path& base_dir = {});
};

enum class Stage { stats, split, train_mf, prep, train_cnn, evaluate };

std::string_view stage_name(Stage stage);  // command spelling, e.g. "train-mf"

// Canonical `key=value` lines of every setting that influences `stage`.
std::string stage_settings(const PipelineConfig& config, Stage stage);

// Derived generator seed of a stage; `stream` separates the uses within one.
std::uint64_t stage_seed(const PipelineConfig& config, Stage stage, std::uint64_t stream = 0);

// Exclusive lock on a work directory (created if needed), released on
// destruction. BusyError when another holder exists.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Progress messages; nullptr silences them. Defaults to std::clog.
void set_log_stream(std::ostream* out);

// Location of a stage's metadata sidecar inside the work directory.
std::filesystem::path sidecar_path(const PipelineConfig& config, Stage stage);

// Checks that `stage` ran with the current settings and that its inputs and
// outputs are unchanged, then does the same for its predecessors. Throws
// NotFoundError naming the command to run, or StalenessError.
void verify_stage(const PipelineConfig& config, Stage stage);

void run_stats(const PipelineConfig& config);
void run_split(const PipelineConfig& config);
void run_train_mf(const PipelineConfig& config);
void run_prep(const PipelineConfig& config);
void run_train_cnn(const PipelineConfig& config);
// Writes report.{json,csv,txt}, per-trial CSVs and evaluate.meta.json into
// `out_dir` (default: <workdir>/report).
eval::EvalReport run_evaluate(const PipelineConfig& config, std::filesystem::path out_dir = {});

// Every stage in order, running only what the chosen methods need.
eval::EvalReport run_all(const PipelineConfig& config, std::filesystem::path out_dir = {});

}  // namespace coldrec::pipeline
