#include "coldrec/textprep.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <map>

#include "coldrec/error.hpp"

namespace coldrec::textprep {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::padding: return "padding";
    case Provenance::pretrained: return "pretrained";
    case Provenance::edit_distance_alias: return "edit_distance_alias";
    case Provenance::random_init: return "random_init";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// EmbeddingTable

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ParameterError("embedding dimension must be >= 1");
  data_.assign(dim_, 0.0);
  row_kind_.push_back(Provenance::padding);
}

std::span<double> EmbeddingTable::mutable_row(std::uint32_t r) {
  if (r == kPadRow) throw ContractError("the padding row is frozen");
  if (r >= rows()) throw ContractError("embedding row out of range");
  return {data_.data() + r * dim_, dim_};
}

const VocabEntry* EmbeddingTable::entry(std::string_view token) const {
  auto it = vocab_.find(std::string(token));
  return it == vocab_.end() ? nullptr : &it->second;
}

std::optional<std::uint32_t> EmbeddingTable::find(std::string_view token) const {
  if (const auto* e = entry(token)) return e->row;
  return std::nullopt;
}

std::uint32_t EmbeddingTable::add_row(std::string token, std::span<const double> values,
                                      Provenance kind) {
  if (values.size() != dim_) throw ParameterError("embedding row has wrong dimension");
  if (kind != Provenance::pretrained && kind != Provenance::random_init) {
    throw ParameterError("rows are either pretrained or random_init");
  }
  if (vocab_.contains(token)) throw ParameterError("token already in vocabulary: " + token);
  const auto r = static_cast<std::uint32_t>(rows());
  data_.insert(data_.end(), values.begin(), values.end());
  row_kind_.push_back(kind);
  if (kind == Provenance::pretrained) {
    if (pretrained_by_length_.size() <= token.size()) pretrained_by_length_.resize(token.size() + 1);
    pretrained_by_length_[token.size()].push_back(token);
  }
  vocab_.emplace(std::move(token), VocabEntry{r, kind});
  return r;
}

void EmbeddingTable::add_alias(std::string token, std::uint32_t r) {
  if (r == kPadRow || r >= rows()) throw ParameterError("alias must target a non-pad row");
  if (vocab_.contains(token)) throw ParameterError("token already in vocabulary: " + token);
  vocab_.emplace(std::move(token), VocabEntry{r, Provenance::edit_distance_alias});
}

std::span<const std::string> EmbeddingTable::pretrained_tokens_of_length(std::size_t len) const {
  if (len >= pretrained_by_length_.size()) return {};
  return pretrained_by_length_[len];
}

std::size_t EmbeddingTable::count(Provenance kind) const {
  return static_cast<std::size_t>(std::count_if(
      vocab_.begin(), vocab_.end(), [&](const auto& kv) { return kv.second.kind == kind; }));
}

bool EmbeddingTable::operator==(const EmbeddingTable& other) const {
  return dim_ == other.dim_ && data_ == other.data_ && row_kind_ == other.row_kind_ &&
         vocab_ == other.vocab_;
}

// ---------------------------------------------------------------------------
// Tokenization and loading

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z')) {
      current.push_back(ch);
    } else if (c >= 'A' && c <= 'Z') {
      current.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t dim,
                               std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings: " + path.string());
  EmbeddingTable table(dim);
  std::vector<double> values(dim);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    if (p == end) continue;
    const char* tok_end = p;
    while (tok_end < end && *tok_end != ' ' && *tok_end != '\t') ++tok_end;
    std::string token(p, tok_end);
    p = tok_end;

    std::size_t n = 0;
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p == end) break;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{}) {
        throw ParseError(path.string() + " line " + std::to_string(line_no) +
                         ": bad real value");
      }
      if (n < dim) values[n] = v;
      ++n;
      p = next;
    }
    if (n != dim) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(dim) + " components, found " + std::to_string(n));
    }
    if (table.entry(token)) {
      if (warnings) {
        warnings->push_back("duplicate token '" + token + "' on line " +
                            std::to_string(line_no) + " ignored");
      }
      continue;
    }
    table.add_row(std::move(token), values, Provenance::pretrained);
  }
  if (in.bad()) throw IoError("read error: " + path.string());
  return table;
}

// ---------------------------------------------------------------------------
// Edit distance

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t edit_distance_bounded(std::string_view a, std::string_view b, std::size_t bound) {
  const std::size_t over = bound + 1;
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  if ((n > m ? n - m : m - n) > bound) return over;

  // Only cells with |i - j| <= bound can hold values <= bound.
  std::vector<std::size_t> prev(m + 1, over), cur(m + 1, over);
  for (std::size_t j = 0; j <= std::min(m, bound); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    std::fill(cur.begin(), cur.end(), over);
    if (i <= bound) cur[0] = i;
    const std::size_t lo = i > bound ? i - bound : 1;
    const std::size_t hi = std::min(m, i + bound);
    std::size_t row_min = cur[0];
    for (std::size_t j = lo; j <= hi; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub, over});
      row_min = std::min(row_min, cur[j]);
    }
    if (row_min > bound) return over;
    std::swap(prev, cur);
  }
  return std::min(prev[m], over);
}

std::uint32_t resolve_token(std::string_view token, EmbeddingTable& table, Rng& rng) {
  if (token.empty()) throw ParameterError("cannot resolve an empty token");
  if (auto r = table.find(token)) return *r;

  const std::size_t len = token.size();
  std::size_t best_distance = kMaxAliasDistance + 1;
  const std::string* best = nullptr;
  const std::size_t min_len = len > kMaxAliasDistance ? len - kMaxAliasDistance : 0;
  for (std::size_t l = min_len; l <= len + kMaxAliasDistance; ++l) {
    for (const auto& candidate : table.pretrained_tokens_of_length(l)) {
      const auto d = edit_distance_bounded(token, candidate, std::min(best_distance, kMaxAliasDistance));
      if (d > kMaxAliasDistance) continue;
      if (d < best_distance || (d == best_distance && candidate < *best)) {
        best_distance = d;
        best = &candidate;
      }
    }
  }
  if (best) {
    const auto row = *table.find(*best);
    table.add_alias(std::string(token), row);
    return row;
  }
  std::vector<double> values(table.dim());
  for (auto& v : values) v = rng.uniform(-kRandomInitBound, kRandomInitBound);
  return table.add_row(std::string(token), values, Provenance::random_init);
}

// ---------------------------------------------------------------------------
// Document preparation

PrepareResult prepare_docs(std::span<const Description> descriptions, EmbeddingTable& table,
                           Rng& rng, const PrepareOptions& options) {
  std::vector<std::string> empty_ids;
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(descriptions.size());
  for (const auto& d : descriptions) {
    tokenized.push_back(tokenize(d.text));
    if (tokenized.back().empty()) empty_ids.push_back(d.business_id);
  }
  if (!empty_ids.empty()) {
    std::string msg = "descriptions without tokens for business(es):";
    for (const auto& id : empty_ids) msg += " " + id;
    throw ParameterError(msg);
  }

  PrepareResult result;
  const auto aliases_before = table.count(Provenance::edit_distance_alias);
  const auto random_before = table.count(Provenance::random_init);
  std::size_t longest = 0;
  for (std::size_t n = 0; n < descriptions.size(); ++n) {
    auto& tokens = tokenized[n];
    if (options.max_tokens > 0 && tokens.size() > options.max_tokens) {
      tokens.resize(options.max_tokens);
      ++result.truncated;
    }
    TokenizedDoc doc;
    doc.business_id = descriptions[n].business_id;
    doc.true_length = tokens.size();
    doc.token_ids.reserve(tokens.size());
    for (const auto& t : tokens) doc.token_ids.push_back(resolve_token(t, table, rng));
    longest = std::max(longest, doc.true_length);
    result.docs.push_back(std::move(doc));
  }
  for (auto& doc : result.docs) doc.token_ids.resize(longest, EmbeddingTable::kPadRow);
  result.aliases_added = table.count(Provenance::edit_distance_alias) - aliases_before;
  result.random_added = table.count(Provenance::random_init) - random_before;
  return result;
}

EmbeddingTable compact_table(const EmbeddingTable& table, std::span<TokenizedDoc> docs) {
  std::vector<bool> used(table.rows(), false);
  for (const auto& doc : docs) {
    for (auto id : doc.token_ids) {
      if (id >= table.rows()) throw ParameterError("document references a missing row");
      used[id] = true;
    }
  }
  std::vector<const std::string*> owner(table.rows(), nullptr);
  std::map<std::string, std::uint32_t> aliases;
  for (const auto& [token, e] : table.vocab()) {
    if (e.kind == Provenance::edit_distance_alias) {
      aliases.emplace(token, e.row);
    } else {
      owner[e.row] = &token;
    }
  }

  EmbeddingTable out(table.dim());
  std::vector<std::uint32_t> remap(table.rows(), EmbeddingTable::kPadRow);
  for (std::uint32_t r = 1; r < table.rows(); ++r) {
    if (!used[r]) continue;
    if (!owner[r]) throw ContractError("embedding row without owning token");
    remap[r] = out.add_row(*owner[r], table.row(r), table.row_provenance(r));
  }
  for (const auto& [token, r] : aliases) {
    if (used[r]) out.add_alias(token, remap[r]);
  }
  for (auto& doc : docs) {
    for (auto& id : doc.token_ids) id = remap[id];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr std::uint32_t kPreparedVersion = 1;
}

void encode_table(binio::Writer& w, const EmbeddingTable& table) {
  w.u64(table.dim());
  w.u64(table.rows());
  for (std::uint32_t r = 0; r < table.rows(); ++r) {
    w.u32(static_cast<std::uint32_t>(table.row_provenance(r)));
    for (double v : table.row(r)) w.f64(v);
  }
  std::vector<std::pair<std::string_view, VocabEntry>> entries(table.vocab().begin(),
                                                               table.vocab().end());
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  w.u64(entries.size());
  for (const auto& [token, e] : entries) {
    w.str(token);
    w.u32(e.row);
    w.u32(static_cast<std::uint32_t>(e.kind));
  }
}

EmbeddingTable decode_table(binio::Reader& r) {
  const auto dim = r.u64();
  const auto rows = r.u64();
  if (rows == 0) throw ParseError("embedding snapshot without pad row");
  std::vector<Provenance> kinds(rows);
  std::vector<std::vector<double>> values(rows, std::vector<double>(dim));
  for (std::uint64_t i = 0; i < rows; ++i) {
    kinds[i] = static_cast<Provenance>(r.u32());
    for (auto& v : values[i]) v = r.f64();
  }
  if (kinds[0] != Provenance::padding) throw ParseError("row 0 must be the pad row");
  std::vector<std::pair<std::string, VocabEntry>> owners(rows);
  std::vector<std::pair<std::string, VocabEntry>> aliases;
  const auto entries = r.u64();
  for (std::uint64_t i = 0; i < entries; ++i) {
    std::string token = r.str();
    VocabEntry e{r.u32(), static_cast<Provenance>(r.u32())};
    if (e.row == 0 || e.row >= rows) throw ParseError("vocab entry with bad row");
    if (e.kind == Provenance::edit_distance_alias) {
      aliases.emplace_back(std::move(token), e);
    } else {
      owners[e.row] = {std::move(token), e};
    }
  }
  EmbeddingTable table(dim);
  for (std::uint64_t i = 1; i < rows; ++i) {
    if (owners[i].first.empty()) throw ParseError("embedding row without owning token");
    table.add_row(std::move(owners[i].first), values[i], kinds[i]);
  }
  for (auto& [token, e] : aliases) table.add_alias(std::move(token), e.row);
  return table;
}

void save_prepared(const std::filesystem::path& path, const EmbeddingTable& table,
                   std::span<const TokenizedDoc> docs) {
  binio::Writer w;
  w.magic("CRDC");
  w.u32(kPreparedVersion);
  encode_table(w, table);
  w.u64(docs.size());
  for (const auto& d : docs) {
    w.str(d.business_id);
    w.u64(d.true_length);
    w.u64(d.token_ids.size());
    for (auto id : d.token_ids) w.u32(id);
  }
  w.save(path);
}

PreparedCorpus load_prepared(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic("CRDC");
  if (const auto v = r.u32(); v != kPreparedVersion) {
    throw ParseError("unsupported prepared-docs version " + std::to_string(v));
  }
  PreparedCorpus out{decode_table(r), {}};
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    TokenizedDoc d;
    d.business_id = r.str();
    d.true_length = r.u64();
    d.token_ids.resize(r.u64());
    for (auto& id : d.token_ids) {
      id = r.u32();
      if (id >= out.table.rows()) throw ParseError("document references a missing row");
    }
    out.docs.push_back(std::move(d));
  }
  if (!r.at_end()) throw ParseError("trailing bytes in prepared-docs file");
  return out;
}

}  // namespace coldrec::textprep
