#include "coldrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "coldrec/error.hpp"
#include "coldrec/kvconfig.hpp"

namespace coldrec::corpus {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Date

Date Date::parse(std::string_view text) {
  auto fail = [&] { return ParseError("bad date '" + std::string(text) + "'"); };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw fail();
  auto num = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
    if (ec != std::errc{} || p != text.data() + pos + len) throw fail();
    return v;
  };
  Date d{num(0, 4), static_cast<unsigned>(num(5, 2)), static_cast<unsigned>(num(8, 2))};
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) throw fail();
  return d;
}

std::string Date::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year, month, day);
  return buf;
}

// ---------------------------------------------------------------------------
// ReviewSet

ReviewSet::ReviewSet(std::vector<Review> reviews) : reviews_(std::move(reviews)) {
  for (std::size_t i = 0; i < reviews_.size(); ++i) {
    const auto& r = reviews_[i];
    auto [it, inserted] = by_business_.try_emplace(r.business_id);
    if (inserted) business_order_.push_back(r.business_id);
    it->second.push_back(i);
    by_user_[r.user_id].push_back(i);
  }
}

std::span<const std::size_t> ReviewSet::business_positions(std::string_view id) const {
  if (auto it = by_business_.find(id); it != by_business_.end()) return it->second;
  return {};
}

std::span<const std::size_t> ReviewSet::user_positions(std::string_view id) const {
  if (auto it = by_user_.find(id); it != by_user_.end()) return it->second;
  return {};
}

ReviewSet ReviewSet::subset(std::span<const std::size_t> positions) const {
  std::vector<Review> out;
  out.reserve(positions.size());
  for (auto p : positions) {
    if (p >= reviews_.size()) {
      throw ParameterError("review position " + std::to_string(p) + " out of range");
    }
    out.push_back(reviews_[p]);
  }
  return ReviewSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Loading

FieldNames FieldNames::load(const std::filesystem::path& path) {
  const auto kv = KeyValues::load(path);
  FieldNames f;
  f.user_id = kv.get_or("user_id", f.user_id);
  f.business_id = kv.get_or("business_id", f.business_id);
  f.stars = kv.get_or("stars", f.stars);
  f.votes = kv.get_or("votes", f.votes);
  f.text = kv.get_or("text", f.text);
  f.date = kv.get_or("date", f.date);
  return f;
}

namespace {

const json& field(const json& obj, const std::string& name) {
  auto it = obj.find(name);
  if (it == obj.end()) throw ParseError("missing field '" + name + "'");
  return *it;
}

std::string id_field(const json& obj, const std::string& name) {
  const auto& v = field(obj, name);
  if (!v.is_string() || v.get_ref<const std::string&>().empty()) {
    throw ParseError("field '" + name + "' must be a non-empty string");
  }
  return v.get<std::string>();
}

std::int64_t vote_count(const json& v, const std::string& name) {
  if (!v.is_number_integer()) {
    throw ParseError("vote count '" + name + "' must be an integer");
  }
  const auto n = v.get<std::int64_t>();
  if (n < 0) throw ParseError("vote count '" + name + "' is negative");
  return n;
}

std::int64_t parse_votes(const json& v, const LoadOptions& opt) {
  const auto& name = opt.fields.votes;
  if (v.is_object()) {
    if (!opt.votes_category.empty()) {
      auto it = v.find(opt.votes_category);
      return it == v.end() ? 0 : vote_count(*it, opt.votes_category);
    }
    std::int64_t total = 0;
    for (const auto& [key, count] : v.items()) total += vote_count(count, key);
    return total;
  }
  return vote_count(v, name);
}

Review parse_review(std::string_view line, const LoadOptions& opt) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ParseError("record is not a JSON object");
  const auto& f = opt.fields;
  Review r;
  r.user_id = id_field(obj, f.user_id);
  r.business_id = id_field(obj, f.business_id);
  const auto& stars = field(obj, f.stars);
  if (!stars.is_number()) throw ParseError("field '" + f.stars + "' must be a number");
  r.stars = stars.get<double>();
  if (!(r.stars >= 1.0 && r.stars <= 5.0)) {
    throw ParseError("stars out of range [1,5]");
  }
  r.votes = parse_votes(field(obj, f.votes), opt);
  const auto& text = field(obj, f.text);
  if (!text.is_string()) throw ParseError("field '" + f.text + "' must be a string");
  r.text = text.get<std::string>();
  const auto& date = field(obj, f.date);
  if (!date.is_string()) throw ParseError("field '" + f.date + "' must be a string");
  r.date = Date::parse(date.get_ref<const std::string&>());
  return r;
}

}  // namespace

ReviewSet read_reviews(std::istream& in, const LoadOptions& options, LoadStats* stats) {
  std::vector<Review> reviews;
  LoadStats local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++local.lines;
    try {
      reviews.push_back(parse_review(line, options));
    } catch (const ParseError& e) {
      if (options.strict) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
      }
      ++local.skipped;
    }
  }
  if (in.bad()) throw IoError("read error in review stream");
  if (stats) *stats = local;
  return ReviewSet(std::move(reviews));
}

ReviewSet load_reviews(const std::filesystem::path& path, const LoadOptions& options,
                       LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read review file: " + path.string());
  return read_reviews(in, options, stats);
}

void write_reviews(const ReviewSet& set, std::ostream& out, const FieldNames& f) {
  for (const auto& r : set.reviews()) {
    json obj;
    obj[f.user_id] = r.user_id;
    obj[f.business_id] = r.business_id;
    obj[f.stars] = r.stars;
    obj[f.votes] = r.votes;
    obj[f.text] = r.text;
    obj[f.date] = r.date.to_string();
    out << obj.dump() << '\n';
  }
}

void write_reviews(const ReviewSet& set, const std::filesystem::path& path,
                   const FieldNames& fields) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write review file: " + path.string());
  write_reviews(set, out, fields);
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Descriptions and splitting

const Review& select_description(std::string_view business_id, const ReviewSet& set) {
  const auto positions = set.business_positions(business_id);
  if (positions.empty()) {
    throw NotFoundError("no reviews for business '" + std::string(business_id) + "'");
  }
  const Review* best = &set[positions.front()];
  for (auto p : positions.subspan(1)) {
    const Review& r = set[p];
    if (r.votes != best->votes) {
      if (r.votes > best->votes) best = &r;
    } else if (r.date != best->date) {
      if (r.date < best->date) best = &r;
    } else if (r.user_id < best->user_id) {
      best = &r;
    }
  }
  return *best;
}

std::vector<HistogramRow> review_distribution(const ReviewSet& set, Axis axis) {
  const auto& index = axis == Axis::user ? set.by_user() : set.by_business();
  std::vector<HistogramRow> rows;
  rows.reserve(index.size());
  for (const auto& [id, positions] : index) rows.push_back({id, positions.size()});
  // The index is ordered by id already, so a stable sort keeps id order on ties.
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.count > b.count; });
  return rows;
}

namespace {

std::size_t rank_cut(double frac, std::size_t n) {
  // Guards against products such as 0.29 * 100 = 28.999999999999996.
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
}

void check_params(const SplitParams& p) {
  auto open01 = [](double x) { return x > 0.0 && x < 1.0; };
  if (!open01(p.test1_frac)) throw ParameterError("test1_frac must lie in (0,1)");
  if (!(p.test2_lo >= 0.0 && p.test2_lo < 1.0) || !open01(p.test2_hi)) {
    throw ParameterError("test2 band bounds must lie in [0,1) and (0,1)");
  }
  if (!(p.test2_lo < p.test2_hi)) throw ParameterError("test2 band is empty or reversed");
  if (p.test2_hi + p.test1_frac > 1.0) {
    throw ParameterError("test2 band overlaps the test1 fraction");
  }
  if (p.min_votes < 0) throw ParameterError("min_votes must be non-negative");
}

}  // namespace

Split split_dataset(const ReviewSet& set, const SplitParams& params) {
  check_params(params);
  if (set.empty()) throw ParameterError("cannot split an empty review set");

  const auto ranking = review_distribution(set, Axis::business);
  const std::size_t n = ranking.size();
  const std::size_t test1_begin = n - rank_cut(params.test1_frac, n);
  const std::size_t band_begin = rank_cut(params.test2_lo, n);
  const std::size_t band_end = std::min(rank_cut(params.test2_hi, n), test1_begin);

  auto qualifies = [&](const std::string& business) {
    for (auto p : set.business_positions(business)) {
      if (set[p].votes >= params.min_votes) return true;
    }
    return false;
  };

  // 0 = train, 1 = test1, 2 = test2
  std::map<std::string_view, int> assignment;
  for (std::size_t rank = band_begin; rank < band_end; ++rank) {
    if (qualifies(ranking[rank].entity_id)) assignment[ranking[rank].entity_id] = 2;
  }
  for (std::size_t rank = test1_begin; rank < n; ++rank) {
    if (qualifies(ranking[rank].entity_id)) assignment[ranking[rank].entity_id] = 1;
  }

  Split split;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto it = assignment.find(set[i].business_id);
    const int which = it == assignment.end() ? 0 : it->second;
    (which == 0 ? split.train_index : which == 1 ? split.test1_index : split.test2_index)
        .push_back(i);
  }
  split.train = set.subset(split.train_index);
  split.test1 = set.subset(split.test1_index);
  split.test2 = set.subset(split.test2_index);
  return split;
}

// ---------------------------------------------------------------------------
// Tabular outputs

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

void write_histogram_csv(std::span<const HistogramRow> rows, std::ostream& out) {
  out << "entity_id,count\n";
  for (const auto& row : rows) out << csv_field(row.entity_id) << ',' << row.count << '\n';
}

void write_histogram_csv(std::span<const HistogramRow> rows,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write histogram: " + path.string());
  write_histogram_csv(rows, out);
}

void write_index_manifest(std::span<const std::size_t> positions,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  for (auto p : positions) out << p << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::size_t> read_index_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest: " + path.string());
  std::vector<std::size_t> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc{} || p != line.data() + line.size()) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) +
                       ": not an index");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace coldrec::corpus
