#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "coldrec/digest.hpp"
#include "coldrec/error.hpp"
#include "coldrec/pipeline.hpp"
#include "coldrec/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace coldrec;
using namespace coldrec::pipeline;
using coldrec::testing::TempDir;

namespace {

synthetic::SynthParams small_synth() {
  synthetic::SynthParams p;
  p.businesses = 40;
  p.users = 120;
  p.min_reviews = 6;
  return p;
}

PipelineConfig bundle_config(const TempDir& dir, const std::string& extra = "") {
  synthetic::write_bundle(small_synth(), dir.path());
  auto kv = KeyValues::load(dir / "config.txt");
  for (const auto& [k, v] : KeyValues::parse(extra).entries()) kv.set(k, v);
  kv.set("workdir", "work");
  kv.set("cnn.max_epochs", "10");
  kv.set("baseline.runs", "5");
  return PipelineConfig::from_kv(kv, dir.path());
}

int cli(const std::string& args) {
  const int status = std::system((std::string(COLDREC_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

struct QuietLog {
  QuietLog() { set_log_stream(nullptr); }
  ~QuietLog() { set_log_stream(&std::clog); }
};

}  // namespace

TEST_CASE("config parsing") {
  QuietLog quiet;
  TempDir dir;
  dir.write("r.json", "");
  SUBCASE("defaults") {
    const auto c = PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\n"), dir.path());
    CHECK(c.reviews == dir / "r.json");
    CHECK(c.mf.k == 20);
    CHECK(c.cnn.output_dim == 20);
    CHECK(c.cnn.num_filters == 50);
    CHECK(c.methods.size() == 4);
    CHECK(c.baseline_runs == 100);
  }
  SUBCASE("output dimension follows k") {
    const auto c = PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\nmf.k = 7\n"), dir.path());
    CHECK(c.cnn.output_dim == 7);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(PipelineConfig::from_kv(KeyValues::parse(""), dir.path()), ParameterError);
    CHECK_THROWS_AS(PipelineConfig::from_kv(KeyValues::parse("reviews = nope.json\n"), dir.path()), IoError);
    CHECK_THROWS_AS(PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\nmf.kk = 3\n"), dir.path()),
                    ParameterError);
    CHECK_THROWS_AS(PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\nmf.k = x\n"), dir.path()),
                    ParameterError);
    CHECK_THROWS_AS(
        PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\neval.methods = cnn, svd\n"), dir.path()),
        ParameterError);
    CHECK_THROWS_AS(PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\nbaseline.runs = 0\n"), dir.path()),
                    ParameterError);
  }
  SUBCASE("stage settings react only to relevant keys") {
    const auto a = PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\n"), dir.path());
    const auto b = PipelineConfig::from_kv(KeyValues::parse("reviews = r.json\ncnn.window = 3\n"), dir.path());
    CHECK(stage_settings(a, Stage::split) == stage_settings(b, Stage::split));
    CHECK(stage_settings(a, Stage::train_mf) == stage_settings(b, Stage::train_mf));
    CHECK(stage_settings(a, Stage::train_cnn) != stage_settings(b, Stage::train_cnn));
  }
}

TEST_CASE("stats on an empty corpus writes header-only histograms") {
  QuietLog quiet;
  TempDir dir;
  dir.write("r.json", "");
  auto kv = KeyValues::parse("reviews = r.json\nworkdir = w\n");
  const auto c = PipelineConfig::from_kv(kv, dir.path());
  run_stats(c);
  CHECK(testing::read_text(dir / "w/stats/users.csv") == "entity_id,count\n");
  CHECK(testing::read_text(dir / "w/stats/businesses.csv") == "entity_id,count\n");
}

TEST_CASE("stage ordering and staleness") {
  QuietLog quiet;
  TempDir dir;
  const auto c = bundle_config(dir);

  CHECK_THROWS_AS(run_train_mf(c), NotFoundError);
  run_split(c);
  run_train_mf(c);
  CHECK_THROWS_AS(run_train_cnn(c), NotFoundError);  // prep missing
  run_prep(c);
  run_train_cnn(c);
  const auto report = run_evaluate(c);
  CHECK(report.rows.size() == 4);
  verify_stage(c, Stage::train_cnn);

  SUBCASE("changed settings") {
    auto changed = c;
    changed.mf.epochs += 1;
    CHECK_THROWS_AS(verify_stage(changed, Stage::train_mf), StalenessError);
    CHECK_THROWS_AS(run_evaluate(changed), StalenessError);
    // Split does not depend on MF settings.
    verify_stage(changed, Stage::split);
  }
  SUBCASE("tampered artifact") {
    std::ofstream(c.workdir / "split/test1.idx", std::ios::app) << "0\n";
    CHECK_THROWS_AS(verify_stage(c, Stage::split), StalenessError);
    CHECK_THROWS_AS(run_train_cnn(c), StalenessError);
  }
  SUBCASE("re-split invalidates downstream stages") {
    auto other = c;
    other.split.min_votes = 100;  // empties both test sets
    run_split(other);
    CHECK_THROWS_AS(verify_stage(other, Stage::train_mf), StalenessError);
  }
  SUBCASE("changed input file") {
    std::ofstream(c.reviews, std::ios::app) << "\n";
    CHECK_THROWS_AS(verify_stage(c, Stage::split), StalenessError);
  }
  SUBCASE("method subset") {
    auto subset = c;
    subset.methods = {"random2"};
    const auto r = run_evaluate(subset, dir / "only");
    CHECK(r.rows.size() == 1);
    CHECK(r.rows[0].method == "random2");
    CHECK(std::filesystem::exists(dir / "only/trials_random2_test1.csv"));
  }
  SUBCASE("oracle without a full-data model") {
    auto partial = c;
    partial.train_full_mf = false;
    run_train_mf(partial);
    partial.methods = {"oracle"};
    CHECK_THROWS_AS(run_evaluate(partial), NotFoundError);
  }
}

TEST_CASE("reruns are byte-identical") {
  QuietLog quiet;
  TempDir dir;
  const auto c = bundle_config(dir);
  run_all(c);
  std::map<std::string, std::string> first;
  for (const auto& e : std::filesystem::recursive_directory_iterator(c.workdir)) {
    if (e.is_regular_file()) first[e.path().string()] = sha256_file(e.path());
  }
  run_all(c);
  std::map<std::string, std::string> second;
  for (const auto& e : std::filesystem::recursive_directory_iterator(c.workdir)) {
    if (e.is_regular_file()) second[e.path().string()] = sha256_file(e.path());
  }
  CHECK(first.size() > 15);
  CHECK(first == second);
}

TEST_CASE("lock") {
  TempDir dir;
  {
    WorkdirLock lock(dir / "w");
    CHECK_THROWS_AS(WorkdirLock(dir / "w"), BusyError);
  }
  WorkdirLock again(dir / "w");
}

TEST_CASE("command-line exit codes") {
  TempDir dir;
  synthetic::write_bundle(small_synth(), dir.path());
  const auto cfg = (dir / "config.txt").string();
  const auto work = (dir / "work").string();
  const auto base = "--config " + cfg + " --workdir " + work;
  CHECK(cli("") == 2);
  CHECK(cli("stats") == 2);  // no --config
  CHECK(cli("stats --config " + (dir / "missing.txt").string()) == 3);
  CHECK(cli("train-mf " + base) == 7);
  CHECK(cli("split " + base) == 0);
  CHECK(cli("split " + base + " --strict --lenient") == 2);
  dir.write("bad.json", "{\"user_id\": 1}\n");
  dir.write("bad.txt", "reviews = bad.json\n");
  CHECK(cli("stats --config " + (dir / "bad.txt").string() + " --workdir " + work) == 4);
  CHECK(cli("stats --lenient --config " + (dir / "bad.txt").string() + " --workdir " + (dir / "w2").string()) == 0);
  CHECK(cli("train-mf " + base) == 0);
  CHECK(cli("train-mf " + base + " --seed 99") == 0);
  CHECK(cli("evaluate --methods random1 --runs 3 " + base) == 5);  // MF trained with seed 99 now
  dir.write(".lock", "");
  CHECK(cli("stats --config " + cfg + " --workdir " + dir.path().string()) == 8);
  dir.write("diverge.txt", "reviews = reviews.json\nmf.learning_rate = 80\nmf.regularization = 0\n"
                           "mf.halve_on_increase = false\nmf.train_full = false\n");
  CHECK(cli("split --config " + (dir / "diverge.txt").string() + " --workdir " + work) == 0);
  CHECK(cli("train-mf --config " + (dir / "diverge.txt").string() + " --workdir " + work) == 6);
  CHECK(setenv("COLDREC_WORKDIR", work.c_str(), 1) == 0);
  // The diverged run left the earlier train-mf record, which no longer matches.
  CHECK(cli("verify --config " + (dir / "diverge.txt").string()) == 5);
  CHECK(cli("verify --config " + cfg + " --seed 99") == 0);
  unsetenv("COLDREC_WORKDIR");
}
