#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "coldrec/error.hpp"
#include "coldrec/kvconfig.hpp"
#include "coldrec/pipeline.hpp"
#include "coldrec/synthetic.hpp"

namespace {

namespace fs = std::filesystem;
using namespace coldrec;

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kParameter = 2,
  kIo = 3,
  kParse = 4,
  kStale = 5,
  kDivergence = 6,
  kNotFound = 7,
  kBusy = 8,
};

struct Flags {
  std::string config;
  std::string workdir;
  std::optional<std::uint64_t> seed;
  std::optional<bool> strict;
  std::string methods;
  std::optional<int> runs;
  std::string out;
};

pipeline::PipelineConfig load_config(const Flags& f) {
  if (f.config.empty()) throw ParameterError("--config is required");
  auto kv = KeyValues::load(f.config);
  if (f.seed) kv.set("seed", std::to_string(*f.seed));
  if (f.strict) kv.set("strict", *f.strict ? "true" : "false");
  if (!f.methods.empty()) kv.set("eval.methods", f.methods);
  if (f.runs) kv.set("baseline.runs", std::to_string(*f.runs));
  auto config = pipeline::PipelineConfig::from_kv(kv, fs::path(f.config).parent_path());
  if (!f.workdir.empty()) {
    config.workdir = f.workdir;
  } else if (const char* env = std::getenv("COLDREC_WORKDIR"); env && *env) {
    config.workdir = env;
  }
  return config;
}

int run(const std::string& command, const Flags& flags, const synthetic::SynthParams& synth) {
  if (command == "synth") {
    if (flags.out.empty()) throw ParameterError("synth needs --out <dir>");
    synthetic::write_bundle(synth, flags.out);
    std::cout << "wrote " << (fs::path(flags.out) / "config.txt").string() << "\n";
    return kOk;
  }
  const auto config = load_config(flags);
  pipeline::WorkdirLock lock(config.workdir);
  if (command == "stats") pipeline::run_stats(config);
  else if (command == "split") pipeline::run_split(config);
  else if (command == "train-mf") pipeline::run_train_mf(config);
  else if (command == "prep") pipeline::run_prep(config);
  else if (command == "train-cnn") pipeline::run_train_cnn(config);
  else if (command == "evaluate") std::cout << eval::to_table(pipeline::run_evaluate(config, flags.out));
  else if (command == "run") std::cout << eval::to_table(pipeline::run_all(config, flags.out));
  else if (command == "verify") {
    for (auto s : {pipeline::Stage::stats, pipeline::Stage::split, pipeline::Stage::train_mf,
                   pipeline::Stage::prep, pipeline::Stage::train_cnn}) {
      if (!fs::exists(pipeline::sidecar_path(config, s))) {
        std::cout << pipeline::stage_name(s) << ": not run\n";
        continue;
      }
      pipeline::verify_stage(config, s);
      std::cout << pipeline::stage_name(s) << ": up to date\n";
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Item cold-start recommendation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags flags;
  synthetic::SynthParams synth;
  app.add_option("--config", flags.config, "Pipeline configuration file (key = value)");
  app.add_option("--workdir", flags.workdir, "Work directory (default: $COLDREC_WORKDIR, then config)");
  app.add_option("--seed", flags.seed, "Master seed, overrides the config");
  auto* strict = app.add_flag_function(
      "--strict", [&](std::int64_t) { flags.strict = true; }, "Fail on the first malformed review line");
  app.add_flag_function(
         "--lenient", [&](std::int64_t) { flags.strict = false; }, "Skip malformed review lines")
      ->excludes(strict);
  app.add_option("--methods", flags.methods, "Comma-separated subset of random1,random2,cnn,oracle");
  app.add_option("--runs", flags.runs, "Random-baseline trials")->check(CLI::PositiveNumber);
  app.add_option("--out", flags.out, "Output directory (evaluate, run, synth)");

  const std::pair<const char*, const char*> commands[] = {
      {"stats", "Review-count histograms per user and per business"},
      {"split", "Cold-start train/test1/test2 split manifests"},
      {"train-mf", "Train SVD++ on the training split (and on all data for the oracle)"},
      {"prep", "Tokenize business descriptions against the embeddings"},
      {"train-cnn", "Train the description-to-factors network"},
      {"evaluate", "Rate the test sets with every method and write the report"},
      {"run", "All stages in order"},
      {"verify", "Check every stage's artifacts against current inputs"},
      {"synth", "Write a synthetic corpus, embeddings and config to --out"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);
  auto* synth_cmd = app.get_subcommand("synth");
  synth_cmd->add_option("--businesses", synth.businesses, "Number of businesses")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--users", synth.users, "Number of users")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--synth-seed", synth.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kParameter;
  }

  const auto command = app.get_subcommands().front()->get_name();
  try {
    return run(command, flags, synth);
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kParameter;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kParse;
  } catch (const StalenessError& e) {
    std::cerr << "stale: " << e.what() << "\n";
    return kStale;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const NotFoundError& e) {
    std::cerr << "missing: " << e.what() << "\n";
    return kNotFound;
  } catch (const BusyError& e) {
    std::cerr << "busy: " << e.what() << "\n";
    return kBusy;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
