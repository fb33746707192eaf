#include "coldrec/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "coldrec/coldstart.hpp"
#include "coldrec/digest.hpp"
#include "coldrec/error.hpp"
#include "coldrec/format.hpp"
#include "coldrec/rng.hpp"

namespace coldrec::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::set<std::string, std::less<>> kKnownKeys = {
    "reviews",          "embeddings",         "workdir",          "seed",
    "strict",           "votes",              "field.user_id",    "field.business_id",
    "field.stars",      "field.votes",        "field.text",       "field.date",
    "split.test1_frac", "split.test2_lo",     "split.test2_hi",   "split.min_votes",
    "split.write_jsonl", "mf.k",              "mf.learning_rate", "mf.regularization",
    "mf.epochs",        "mf.init_scale",      "mf.halve_on_increase", "mf.train_full",
    "prep.max_tokens",  "cnn.embed_dim",      "cnn.num_filters",  "cnn.window",
    "cnn.learning_rate", "cnn.batch_size",    "cnn.max_epochs",   "cnn.validation_frac",
    "baseline.runs",    "eval.methods",       "eval.clamp",
};

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::size_t get_size(const KeyValues& kv, std::string_view key, std::size_t fallback) {
  const auto v = kv.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ParameterError("config key '" + std::string(key) + "' must not be negative");
  return static_cast<std::size_t>(v);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

}  // namespace

PipelineConfig PipelineConfig::from_kv(const KeyValues& kv, const fs::path& base_dir) {
  std::string unknown;
  for (const auto& [key, value] : kv.entries()) {
    if (!kKnownKeys.contains(key)) unknown += " " + key;
  }
  if (!unknown.empty()) throw ParameterError("unknown config key(s):" + unknown);

  PipelineConfig c;
  const auto reviews = kv.get("reviews");
  if (!reviews || reviews->empty()) throw ParameterError("config key 'reviews' is required");
  c.reviews = resolve(base_dir, *reviews);
  if (!fs::is_regular_file(c.reviews)) throw IoError("reviews file not found: " + c.reviews.string());
  if (auto e = kv.get("embeddings"); e && !e->empty()) {
    c.embeddings = resolve(base_dir, *e);
    if (!fs::is_regular_file(c.embeddings)) {
      throw IoError("embeddings file not found: " + c.embeddings.string());
    }
  }
  if (auto w = kv.get("workdir"); w && !w->empty()) c.workdir = resolve(base_dir, *w);
  c.seed = kv.get_u64("seed", 0);

  c.load.strict = kv.get_bool("strict", true);
  c.load.votes_category = kv.get_or("votes", "");
  auto& f = c.load.fields;
  f.user_id = kv.get_or("field.user_id", f.user_id);
  f.business_id = kv.get_or("field.business_id", f.business_id);
  f.stars = kv.get_or("field.stars", f.stars);
  f.votes = kv.get_or("field.votes", f.votes);
  f.text = kv.get_or("field.text", f.text);
  f.date = kv.get_or("field.date", f.date);

  c.split.test1_frac = kv.get_double("split.test1_frac", c.split.test1_frac);
  c.split.test2_lo = kv.get_double("split.test2_lo", c.split.test2_lo);
  c.split.test2_hi = kv.get_double("split.test2_hi", c.split.test2_hi);
  c.split.min_votes = kv.get_int("split.min_votes", c.split.min_votes);
  c.split_jsonl = kv.get_bool("split.write_jsonl", false);

  c.mf.k = static_cast<int>(kv.get_int("mf.k", c.mf.k));
  c.mf.learning_rate = kv.get_double("mf.learning_rate", c.mf.learning_rate);
  c.mf.regularization = kv.get_double("mf.regularization", c.mf.regularization);
  c.mf.epochs = static_cast<int>(kv.get_int("mf.epochs", c.mf.epochs));
  c.mf.init_scale = kv.get_double("mf.init_scale", c.mf.init_scale);
  c.mf.halve_on_increase = kv.get_bool("mf.halve_on_increase", true);
  c.train_full_mf = kv.get_bool("mf.train_full", true);
  c.mf.validate();

  c.prep.max_tokens = get_size(kv, "prep.max_tokens", c.prep.max_tokens);

  c.cnn.embed_dim = get_size(kv, "cnn.embed_dim", c.cnn.embed_dim);
  c.cnn.num_filters = get_size(kv, "cnn.num_filters", c.cnn.num_filters);
  c.cnn.window = get_size(kv, "cnn.window", c.cnn.window);
  c.cnn.output_dim = static_cast<std::size_t>(c.mf.k);
  c.cnn.learning_rate = kv.get_double("cnn.learning_rate", c.cnn.learning_rate);
  c.cnn.batch_size = get_size(kv, "cnn.batch_size", c.cnn.batch_size);
  c.cnn.max_epochs = static_cast<int>(kv.get_int("cnn.max_epochs", c.cnn.max_epochs));
  c.cnn.validation_frac = kv.get_double("cnn.validation_frac", c.cnn.validation_frac);
  c.cnn.validate();

  c.baseline_runs = static_cast<int>(kv.get_int("baseline.runs", c.baseline_runs));
  if (c.baseline_runs < 1) throw ParameterError("baseline.runs must be >= 1");
  if (auto m = kv.get("eval.methods")) c.methods = split_list(*m);
  if (c.methods.empty()) throw ParameterError("eval.methods lists no method");
  for (const auto& m : c.methods) coldstart::parse_source_kind(m);
  c.clamp = kv.get_bool("eval.clamp", true);
  return c;
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::stats: return "stats";
    case Stage::split: return "split";
    case Stage::train_mf: return "train-mf";
    case Stage::prep: return "prep";
    case Stage::train_cnn: return "train-cnn";
    case Stage::evaluate: return "evaluate";
  }
  return "unknown";
}

namespace {

class Settings {
 public:
  template <class T>
  Settings& add(std::string_view key, const T& value) {
    out_ << key << '=';
    if constexpr (std::is_same_v<T, double>) {
      out_ << format_real(value);
    } else if constexpr (std::is_same_v<T, bool>) {
      out_ << (value ? "true" : "false");
    } else {
      out_ << value;
    }
    out_ << '\n';
    return *this;
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

void add_load(Settings& s, const PipelineConfig& c) {
  const auto& f = c.load.fields;
  s.add("strict", c.load.strict)
      .add("votes", c.load.votes_category)
      .add("field.user_id", f.user_id)
      .add("field.business_id", f.business_id)
      .add("field.stars", f.stars)
      .add("field.votes", f.votes)
      .add("field.text", f.text)
      .add("field.date", f.date);
}

}  // namespace

std::string stage_settings(const PipelineConfig& c, Stage stage) {
  Settings s;
  s.add("stage", stage_name(stage));
  switch (stage) {
    case Stage::stats:
      add_load(s, c);
      break;
    case Stage::split:
      add_load(s, c);
      s.add("split.test1_frac", c.split.test1_frac)
          .add("split.test2_lo", c.split.test2_lo)
          .add("split.test2_hi", c.split.test2_hi)
          .add("split.min_votes", c.split.min_votes)
          .add("split.write_jsonl", c.split_jsonl);
      break;
    case Stage::train_mf:
      add_load(s, c);
      s.add("seed", c.seed)
          .add("mf.k", c.mf.k)
          .add("mf.learning_rate", c.mf.learning_rate)
          .add("mf.regularization", c.mf.regularization)
          .add("mf.epochs", c.mf.epochs)
          .add("mf.init_scale", c.mf.init_scale)
          .add("mf.halve_on_increase", c.mf.halve_on_increase)
          .add("mf.train_full", c.train_full_mf);
      break;
    case Stage::prep:
      add_load(s, c);
      s.add("seed", c.seed).add("prep.max_tokens", c.prep.max_tokens).add("cnn.embed_dim", c.cnn.embed_dim);
      break;
    case Stage::train_cnn:
      s.add("seed", c.seed)
          .add("cnn.embed_dim", c.cnn.embed_dim)
          .add("cnn.num_filters", c.cnn.num_filters)
          .add("cnn.window", c.cnn.window)
          .add("cnn.output_dim", c.cnn.output_dim)
          .add("cnn.learning_rate", c.cnn.learning_rate)
          .add("cnn.batch_size", c.cnn.batch_size)
          .add("cnn.max_epochs", c.cnn.max_epochs)
          .add("cnn.validation_frac", c.cnn.validation_frac);
      break;
    case Stage::evaluate: {
      std::string methods;
      for (const auto& m : c.methods) methods += (methods.empty() ? "" : ",") + m;
      add_load(s, c);
      s.add("seed", c.seed)
          .add("baseline.runs", c.baseline_runs)
          .add("eval.methods", methods)
          .add("eval.clamp", c.clamp);
      break;
    }
  }
  return s.str();
}

std::uint64_t stage_seed(const PipelineConfig& c, Stage stage, std::uint64_t stream) {
  return derive_seed(derive_seed(c.seed, static_cast<std::uint64_t>(stage)), stream);
}

// ---------------------------------------------------------------------------
// Lock and logging

WorkdirLock::WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
  fs::create_directories(workdir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw BusyError("work directory " + workdir.string() +
                      " is in use by another coldrec process (delete " + path_.string() +
                      " if no such process is running)");
    }
    throw IoError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

std::ostream* g_log = &std::clog;

void log(std::string_view stage, const std::string& message) {
  if (g_log) *g_log << '[' << stage << "] " << message << std::endl;
}

}  // namespace

void set_log_stream(std::ostream* out) { g_log = out; }

// ---------------------------------------------------------------------------
// Sidecars

fs::path sidecar_path(const PipelineConfig& c, Stage stage) {
  return c.workdir / "meta" / (std::string(stage_name(stage)) + ".json");
}

namespace {

constexpr const char* kReviewsInput = "file:reviews";
constexpr const char* kEmbeddingsInput = "file:embeddings";

// Digests computed once per command.
class DigestCache {
 public:
  const std::string& of(const fs::path& p) {
    const auto key = p.lexically_normal().string();
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, sha256_file(p)).first;
    return it->second;
  }
  void forget(const fs::path& p) { cache_.erase(p.lexically_normal().string()); }

 private:
  std::map<std::string, std::string> cache_;
};

struct Sidecar {
  Stage stage;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // key -> digest
  std::vector<std::string> outputs;           // workdir-relative paths
  json summary = json::object();
};

fs::path input_path(const PipelineConfig& c, const std::string& key) {
  if (key == kReviewsInput) return c.reviews;
  if (key == kEmbeddingsInput) return c.embeddings;
  return c.workdir / key;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_sidecar(const PipelineConfig& c, const Sidecar& s, DigestCache& digests, const fs::path& dir,
                   const fs::path& file) {
  const auto settings = stage_settings(c, s.stage);
  json j;
  j["stage"] = stage_name(s.stage);
  j["settings"] = settings;
  j["settings_digest"] = sha256_hex(settings);
  j["seed"] = s.seed;
  j["inputs"] = s.inputs;
  json outputs = json::object();
  for (const auto& rel : s.outputs) {
    digests.forget(dir / rel);
    outputs[rel] = digests.of(dir / rel);
  }
  j["outputs"] = outputs;
  j["summary"] = s.summary;
  write_text(file, j.dump(2) + "\n");
}

std::vector<Stage> predecessors(const PipelineConfig& c, Stage stage) {
  switch (stage) {
    case Stage::stats:
    case Stage::split:
    case Stage::prep: return {};
    case Stage::train_mf: return {Stage::split};
    case Stage::train_cnn: return {Stage::train_mf, Stage::prep};
    case Stage::evaluate: {
      std::vector<Stage> out{Stage::split, Stage::train_mf};
      if (std::find(c.methods.begin(), c.methods.end(), "cnn") != c.methods.end()) {
        out.push_back(Stage::train_cnn);
      }
      return out;
    }
  }
  return {};
}

std::string rerun_hint(Stage stage) { return "run `coldrec " + std::string(stage_name(stage)) + "`"; }

void verify_one(const PipelineConfig& c, Stage stage, DigestCache& digests) {
  const auto path = sidecar_path(c, stage);
  const auto name = std::string(stage_name(stage));
  if (!fs::exists(path)) {
    throw NotFoundError("`" + name + "` has not been run in " + c.workdir.string() + "; " +
                        rerun_hint(stage) + " first");
  }
  json j;
  try {
    std::ifstream in(path, std::ios::binary);
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("corrupt sidecar " + path.string() + ": " + e.what());
  }
  const auto stale = [&](const std::string& why) {
    throw StalenessError("artifacts of `" + name + "` are stale (" + why + "); " + rerun_hint(stage) +
                         " again");
  };
  try {
    if (j.at("settings_digest").get<std::string>() != sha256_hex(stage_settings(c, stage))) {
      stale("settings changed");
    }
    for (const auto& [key, digest] : j.at("inputs").items()) {
      const auto p = input_path(c, key);
      if (!fs::exists(p)) stale("input " + key + " is missing");
      if (digests.of(p) != digest.get<std::string>()) stale("input " + key + " changed");
    }
    for (const auto& [rel, digest] : j.at("outputs").items()) {
      const auto p = c.workdir / rel;
      if (!fs::exists(p)) stale(rel + " is missing");
      if (digests.of(p) != digest.get<std::string>()) stale(rel + " was modified");
    }
  } catch (const json::exception& e) {
    throw ParseError("corrupt sidecar " + path.string() + ": " + e.what());
  }
}

void verify_tree(const PipelineConfig& c, Stage stage, DigestCache& digests, std::set<Stage>& done) {
  if (!done.insert(stage).second) return;
  for (auto p : predecessors(c, stage)) verify_tree(c, p, digests, done);
  verify_one(c, stage, digests);
}

void require(const PipelineConfig& c, Stage stage, DigestCache& digests) {
  std::set<Stage> done;
  for (auto p : predecessors(c, stage)) verify_tree(c, p, digests, done);
}

corpus::ReviewSet load_corpus(const PipelineConfig& c, std::string_view stage) {
  corpus::LoadStats stats;
  auto set = corpus::load_reviews(c.reviews, c.load, &stats);
  log(stage, "loaded " + std::to_string(set.size()) + " reviews (" + std::to_string(set.user_count()) +
                 " users, " + std::to_string(set.business_count()) + " businesses)" +
                 (stats.skipped ? ", skipped " + std::to_string(stats.skipped) + " malformed lines" : ""));
  return set;
}

const char* kSplitFiles[] = {"split/train.idx", "split/test1.idx", "split/test2.idx"};

struct SplitSets {
  corpus::ReviewSet train, test1, test2;
};

SplitSets read_split(const PipelineConfig& c, const corpus::ReviewSet& all) {
  SplitSets s;
  corpus::ReviewSet* targets[] = {&s.train, &s.test1, &s.test2};
  for (int n = 0; n < 3; ++n) {
    const auto idx = corpus::read_index_manifest(c.workdir / kSplitFiles[n]);
    for (auto i : idx) {
      if (i >= all.size()) {
        throw StalenessError(std::string(kSplitFiles[n]) + " points past the end of the corpus; " +
                             rerun_hint(Stage::split) + " again");
      }
    }
    *targets[n] = all.subset(idx);
  }
  return s;
}

void write_mf_history(const std::vector<svdpp::EpochStats>& history, const fs::path& path) {
  std::ostringstream out;
  out << "epoch,learning_rate,rmse,objective,accepted\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << format_real(e.learning_rate) << ',' << format_real(e.rmse) << ','
        << format_real(e.objective) << ',' << (e.accepted ? 1 : 0) << '\n';
  }
  write_text(path, out.str());
}

}  // namespace

void verify_stage(const PipelineConfig& c, Stage stage) {
  DigestCache digests;
  std::set<Stage> done;
  verify_tree(c, stage, digests, done);
}

// ---------------------------------------------------------------------------
// Stages

void run_stats(const PipelineConfig& c) {
  DigestCache digests;
  const auto all = load_corpus(c, "stats");
  Sidecar s{Stage::stats, c.seed, {{kReviewsInput, digests.of(c.reviews)}}, {}, json::object()};
  const auto users = corpus::review_distribution(all, corpus::Axis::user);
  const auto businesses = corpus::review_distribution(all, corpus::Axis::business);
  fs::create_directories(c.workdir / "stats");
  corpus::write_histogram_csv(users, c.workdir / "stats/users.csv");
  corpus::write_histogram_csv(businesses, c.workdir / "stats/businesses.csv");
  s.outputs = {"stats/users.csv", "stats/businesses.csv"};
  s.summary = {{"reviews", all.size()}, {"users", all.user_count()}, {"businesses", all.business_count()}};
  write_sidecar(c, s, digests, c.workdir, sidecar_path(c, Stage::stats));
  log("stats", "wrote user and business histograms to " + (c.workdir / "stats").string());
}

void run_split(const PipelineConfig& c) {
  DigestCache digests;
  const auto all = load_corpus(c, "split");
  const auto split = corpus::split_dataset(all, c.split);
  fs::create_directories(c.workdir / "split");
  corpus::write_index_manifest(split.train_index, c.workdir / kSplitFiles[0]);
  corpus::write_index_manifest(split.test1_index, c.workdir / kSplitFiles[1]);
  corpus::write_index_manifest(split.test2_index, c.workdir / kSplitFiles[2]);
  Sidecar s{Stage::split, c.seed, {{kReviewsInput, digests.of(c.reviews)}}, {}, json::object()};
  s.outputs = {kSplitFiles[0], kSplitFiles[1], kSplitFiles[2]};
  if (c.split_jsonl) {
    corpus::write_reviews(split.train, c.workdir / "split/train.json", c.load.fields);
    corpus::write_reviews(split.test1, c.workdir / "split/test1.json", c.load.fields);
    corpus::write_reviews(split.test2, c.workdir / "split/test2.json", c.load.fields);
    s.outputs.insert(s.outputs.end(), {"split/train.json", "split/test1.json", "split/test2.json"});
  }
  s.summary = {{"train_reviews", split.train.size()},
               {"test1_reviews", split.test1.size()},
               {"test2_reviews", split.test2.size()},
               {"train_businesses", split.train.business_count()},
               {"test1_businesses", split.test1.business_count()},
               {"test2_businesses", split.test2.business_count()}};
  write_sidecar(c, s, digests, c.workdir, sidecar_path(c, Stage::split));
  log("split", "train " + std::to_string(split.train.size()) + ", test1 " +
                   std::to_string(split.test1.size()) + ", test2 " + std::to_string(split.test2.size()) +
                   " reviews");
}

void run_train_mf(const PipelineConfig& c) {
  DigestCache digests;
  require(c, Stage::train_mf, digests);
  const auto all = load_corpus(c, "train-mf");
  const auto sets = read_split(c, all);
  Sidecar s{Stage::train_mf,
            c.seed,
            {{kReviewsInput, digests.of(c.reviews)}, {kSplitFiles[0], digests.of(c.workdir / kSplitFiles[0])}},
            {},
            json::object()};
  fs::create_directories(c.workdir / "mf");

  auto hyper = c.mf;
  hyper.seed = stage_seed(c, Stage::train_mf, 0);
  const auto train = svdpp::train_mf(sets.train, hyper);
  svdpp::save_mf(train.model, c.workdir / "mf/train.crmf");
  write_mf_history(train.history, c.workdir / "mf/train_history.csv");
  s.outputs = {"mf/train.crmf", "mf/train_history.csv"};
  s.summary["train_rmse"] = train.final_rmse;
  log("train-mf", "train model: " + std::to_string(train.model.item_count()) + " items, RMSE " +
                      format_real(train.final_rmse));

  if (c.train_full_mf) {
    hyper.seed = stage_seed(c, Stage::train_mf, 1);
    const auto full = svdpp::train_mf(all, hyper);
    svdpp::save_mf(full.model, c.workdir / "mf/full.crmf");
    write_mf_history(full.history, c.workdir / "mf/full_history.csv");
    s.outputs.insert(s.outputs.end(), {"mf/full.crmf", "mf/full_history.csv"});
    s.summary["full_rmse"] = full.final_rmse;
    log("train-mf", "full-data model: " + std::to_string(full.model.item_count()) + " items, RMSE " +
                        format_real(full.final_rmse));
  } else {
    fs::remove(c.workdir / "mf/full.crmf");
    fs::remove(c.workdir / "mf/full_history.csv");
  }
  write_sidecar(c, s, digests, c.workdir, sidecar_path(c, Stage::train_mf));
}

void run_prep(const PipelineConfig& c) {
  DigestCache digests;
  if (c.embeddings.empty()) throw ParameterError("config key 'embeddings' is required for prep");
  const auto all = load_corpus(c, "prep");
  std::vector<textprep::Description> descriptions;
  descriptions.reserve(all.business_count());
  for (const auto& id : all.business_order()) {
    descriptions.push_back({id, corpus::select_description(id, all).text});
  }
  std::vector<std::string> warnings;
  auto table = textprep::load_embeddings(c.embeddings, c.cnn.embed_dim, &warnings);
  for (const auto& w : warnings) log("prep", "warning: " + w);
  log("prep", "loaded " + std::to_string(table.rows() - 1) + " pretrained vectors");
  Rng rng(stage_seed(c, Stage::prep));
  auto result = textprep::prepare_docs(descriptions, table, rng, c.prep);
  const auto compact = textprep::compact_table(table, result.docs);
  fs::create_directories(c.workdir / "prep");
  textprep::save_prepared(c.workdir / "prep/docs.crdc", compact, result.docs);

  Sidecar s{Stage::prep,
            c.seed,
            {{kReviewsInput, digests.of(c.reviews)}, {kEmbeddingsInput, digests.of(c.embeddings)}},
            {"prep/docs.crdc"},
            json::object()};
  s.summary = {{"docs", result.docs.size()},
               {"padded_length", result.docs.empty() ? 0 : result.docs.front().token_ids.size()},
               {"aliases_added", result.aliases_added},
               {"random_rows_added", result.random_added},
               {"truncated_docs", result.truncated},
               {"table_rows", compact.rows()}};
  write_sidecar(c, s, digests, c.workdir, sidecar_path(c, Stage::prep));
  log("prep", std::to_string(result.docs.size()) + " docs, " + std::to_string(result.aliases_added) +
                  " edit-distance aliases, " + std::to_string(result.random_added) + " random rows");
}

void run_train_cnn(const PipelineConfig& c) {
  DigestCache digests;
  require(c, Stage::train_cnn, digests);
  const auto mf = svdpp::load_mf(c.workdir / "mf/train.crmf");
  auto prepared = textprep::load_prepared(c.workdir / "prep/docs.crdc");

  convnet::TargetMap targets;
  std::vector<textprep::TokenizedDoc> docs;
  for (auto& doc : prepared.docs) {
    const auto item = mf.find_item(doc.business_id);
    if (!item) continue;
    const auto q = mf.item_row(*item);
    targets[doc.business_id] = std::vector<double>(q.begin(), q.end());
    docs.push_back(std::move(doc));
  }
  if (prepared.table.dim() != c.cnn.embed_dim) {
    throw StalenessError("prepared docs have embedding dimension " + std::to_string(prepared.table.dim()) +
                         "; " + rerun_hint(Stage::prep) + " again");
  }
  auto cfg = c.cnn;
  cfg.output_dim = static_cast<std::size_t>(mf.k());
  cfg.seed = stage_seed(c, Stage::train_cnn);
  log("train-cnn", "training on " + std::to_string(docs.size()) + " businesses");
  const auto result = convnet::train_cnn(docs, targets, cfg, std::move(prepared.table));
  fs::create_directories(c.workdir / "cnn");
  convnet::save_cnn(result.best_model, c.workdir / "cnn/model.crcn");
  convnet::write_history_csv(result.history, c.workdir / "cnn/history.csv");

  Sidecar s{Stage::train_cnn,
            c.seed,
            {{"mf/train.crmf", digests.of(c.workdir / "mf/train.crmf")},
             {"prep/docs.crdc", digests.of(c.workdir / "prep/docs.crdc")}},
            {"cnn/model.crcn", "cnn/history.csv"},
            json::object()};
  const auto& best = result.history[static_cast<std::size_t>(result.best_epoch)];
  s.summary = {{"best_epoch", result.best_epoch},
               {"best_val_rmse", best.val_rmse},
               {"initial_val_rmse", result.history.front().val_rmse}};
  write_sidecar(c, s, digests, c.workdir, sidecar_path(c, Stage::train_cnn));
  log("train-cnn", "best epoch " + std::to_string(result.best_epoch) + ", validation RMSE " +
                       format_real(best.val_rmse));
}

eval::EvalReport run_evaluate(const PipelineConfig& c, fs::path out_dir) {
  if (out_dir.empty()) out_dir = c.workdir / "report";
  DigestCache digests;
  require(c, Stage::evaluate, digests);
  const auto all = load_corpus(c, "evaluate");
  const auto sets = read_split(c, all);

  std::vector<std::pair<std::string, const corpus::ReviewSet*>> tests;
  for (const auto& [name, set] : {std::pair{"test1", &sets.test1}, std::pair{"test2", &sets.test2}}) {
    if (set->empty()) {
      log("evaluate", std::string("warning: ") + name + " is empty and is left out of the report");
    } else {
      tests.emplace_back(name, set);
    }
  }
  if (tests.empty()) throw ParameterError("both test sets are empty; nothing to evaluate");
  std::vector<const corpus::ReviewSet*> test_ptrs;
  for (const auto& t : tests) test_ptrs.push_back(t.second);

  const auto mf = svdpp::load_mf(c.workdir / "mf/train.crmf");
  std::map<std::string, std::string> inputs{{kReviewsInput, digests.of(c.reviews)},
                                            {"mf/train.crmf", digests.of(c.workdir / "mf/train.crmf")}};
  for (const auto* f : {kSplitFiles[1], kSplitFiles[2]}) inputs[f] = digests.of(c.workdir / f);

  Sidecar s{Stage::evaluate, c.seed, {}, {"report.json", "report.csv", "report.txt"}, json::object()};
  fs::create_directories(out_dir);
  std::vector<eval::MethodResult> results;
  for (const auto& method : c.methods) {
    const auto kind = coldstart::parse_source_kind(method);
    eval::MethodResult r{method, false, false, {}, std::nullopt};
    if (kind == coldstart::SourceKind::random1 || kind == coldstart::SourceKind::random2) {
      r.stochastic = true;
      r.baseline = true;
      const auto trials = coldstart::run_baseline_trials(test_ptrs, mf, kind, c.baseline_runs,
                                                         stage_seed(c, Stage::evaluate, static_cast<std::uint64_t>(kind)),
                                                         c.clamp);
      for (std::size_t t = 0; t < tests.size(); ++t) {
        const auto& st = trials.per_set[t];
        r.sets.push_back({tests[t].first, st.mean, tests[t].second->size(), st.variance});
        const auto csv = "trials_" + method + "_" + tests[t].first + ".csv";
        coldstart::write_trials_csv(st.rmses, out_dir / csv);
        s.outputs.push_back(csv);
      }
      if (tests.size() > 1) r.combined_variance = trials.combined.variance;
    } else {
      convnet::CnnModel cnn;
      svdpp::MfModel full;
      coldstart::DocMap docs;
      coldstart::FactorSource source;
      if (kind == coldstart::SourceKind::cnn) {
        cnn = convnet::load_cnn(c.workdir / "cnn/model.crcn");
        auto prepared = textprep::load_prepared(c.workdir / "prep/docs.crdc");
        for (auto& d : prepared.docs) docs.emplace(d.business_id, std::move(d));
        source = coldstart::CnnSource{&cnn};
        inputs["cnn/model.crcn"] = digests.of(c.workdir / "cnn/model.crcn");
        inputs["prep/docs.crdc"] = digests.of(c.workdir / "prep/docs.crdc");
      } else {
        if (!fs::exists(c.workdir / "mf/full.crmf")) {
          throw NotFoundError("the oracle method needs the full-data model; set mf.train_full = true and " +
                              rerun_hint(Stage::train_mf) + " again");
        }
        full = svdpp::load_mf(c.workdir / "mf/full.crmf");
        source = coldstart::OracleSource{&full};
        inputs["mf/full.crmf"] = digests.of(c.workdir / "mf/full.crmf");
      }
      for (const auto& [name, set] : tests) {
        Rng unused(0);
        const auto rated = coldstart::rate_test_set(*set, mf, source, docs, unused, c.clamp);
        r.sets.push_back({name, coldstart::rated_rmse(rated), set->size(), std::nullopt});
      }
    }
    log("evaluate", method + " done");
    results.push_back(std::move(r));
  }

  std::string methods;
  for (const auto& m : c.methods) methods += (methods.empty() ? "" : ",") + m;
  const auto report = eval::build_report(
      results, {{"seed", std::to_string(c.seed)},
                {"settings_digest", sha256_hex(stage_settings(c, Stage::evaluate))},
                {"methods", methods},
                {"baseline_runs", std::to_string(c.baseline_runs)},
                {"mf_digest", inputs.at("mf/train.crmf")}});
  const double residual = eval::combined_identity_residual(report);
  if (residual > 1e-9) {
    throw ContractError("combined column violates the pooled identity (residual " + format_real(residual) + ")");
  }
  write_text(out_dir / "report.json", eval::to_json(report));
  write_text(out_dir / "report.csv", eval::to_csv(report));
  write_text(out_dir / "report.txt", eval::to_table(report));

  s.inputs = inputs;
  s.summary = {{"combined_identity_residual", residual}};
  write_sidecar(c, s, digests, out_dir, out_dir / "evaluate.meta.json");
  return report;
}

eval::EvalReport run_all(const PipelineConfig& c, fs::path out_dir) {
  run_stats(c);
  run_split(c);
  run_train_mf(c);
  if (std::find(c.methods.begin(), c.methods.end(), "cnn") != c.methods.end()) {
    run_prep(c);
    run_train_cnn(c);
  }
  return run_evaluate(c, std::move(out_dir));
}

}  // namespace coldrec::pipeline
