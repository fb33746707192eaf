#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "coldrec/binio.hpp"
#include "coldrec/rng.hpp"

namespace coldrec::textprep {

enum class Provenance : std::uint32_t {
  padding = 0,
  pretrained = 1,
  edit_distance_alias = 2,  // vocab entry sharing a pretrained row
  random_init = 3,
};

std::string_view to_string(Provenance p);

struct VocabEntry {
  std::uint32_t row = 0;
  Provenance kind = Provenance::pretrained;
  bool operator==(const VocabEntry&) const = default;
};

// Token -> row lookup over a dense row-major matrix. Row 0 is the all-zero
// padding vector and is never handed out for mutation.
class EmbeddingTable {
 public:
  static constexpr std::uint32_t kPadRow = 0;

  explicit EmbeddingTable(std::size_t dim = 300);

  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return row_kind_.size(); }

  std::span<const double> row(std::uint32_t r) const { return {data_.data() + r * dim_, dim_}; }
  // Throws ContractError for the pad row.
  std::span<double> mutable_row(std::uint32_t r);
  Provenance row_provenance(std::uint32_t r) const { return row_kind_[r]; }

  std::optional<std::uint32_t> find(std::string_view token) const;
  const VocabEntry* entry(std::string_view token) const;
  const std::unordered_map<std::string, VocabEntry>& vocab() const { return vocab_; }

  // Appends a row owned by `token`; `kind` is pretrained or random_init.
  std::uint32_t add_row(std::string token, std::span<const double> values, Provenance kind);
  // Maps `token` onto an existing non-pad row.
  void add_alias(std::string token, std::uint32_t row);

  // Pretrained tokens grouped by byte length, in insertion order.
  std::span<const std::string> pretrained_tokens_of_length(std::size_t len) const;

  // Number of vocab entries of each kind.
  std::size_t count(Provenance kind) const;

  // Flat row-major storage, for optimizers.
  std::span<const double> data() const { return data_; }

  bool operator==(const EmbeddingTable& other) const;

 private:
  std::size_t dim_;
  std::vector<double> data_;
  std::vector<Provenance> row_kind_;
  std::unordered_map<std::string, VocabEntry> vocab_;
  std::vector<std::vector<std::string>> pretrained_by_length_;
};

// Lowercased ASCII alphanumeric runs. Bytes >= 0x80 belong to tokens, so
// UTF-8 words stay intact.
std::vector<std::string> tokenize(std::string_view text);

// GloVe text format: a token then `dim` reals per line. Duplicate tokens keep
// the first vector; a message per duplicate is appended to `warnings`.
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t dim,
                               std::vector<std::string>* warnings = nullptr);

// Levenshtein distance with unit costs.
std::size_t edit_distance(std::string_view a, std::string_view b);
// Exact when the distance is <= bound; otherwise returns bound + 1.
std::size_t edit_distance_bounded(std::string_view a, std::string_view b, std::size_t bound);

inline constexpr std::size_t kMaxAliasDistance = 2;
inline constexpr double kRandomInitBound = 0.25;

// Row for `token`: its own row if known; else the row of the closest
// pretrained token within distance 2 (ties to the lexicographically smallest),
// recorded as an alias; else a fresh uniform [-0.25, 0.25] row.
std::uint32_t resolve_token(std::string_view token, EmbeddingTable& table, Rng& rng);

struct Description {
  std::string business_id;
  std::string text;
};

struct TokenizedDoc {
  std::string business_id;
  std::vector<std::uint32_t> token_ids;  // padded with kPadRow
  std::size_t true_length = 0;
  bool operator==(const TokenizedDoc&) const = default;
};

struct PrepareOptions {
  std::size_t max_tokens = 1000;  // 0 disables truncation
};

struct PrepareResult {
  std::vector<TokenizedDoc> docs;
  std::size_t aliases_added = 0;
  std::size_t random_added = 0;
  std::size_t truncated = 0;
};

// Tokenizes and resolves every description in order, then pads all docs to
// the longest one. Throws ParameterError listing businesses whose text has no
// tokens.
PrepareResult prepare_docs(std::span<const Description> descriptions, EmbeddingTable& table,
                           Rng& rng, const PrepareOptions& options = {});

// Copy of `table` reduced to the pad row plus the rows referenced by `docs`,
// with `docs` remapped in place. Vocab entries of dropped rows are removed.
EmbeddingTable compact_table(const EmbeddingTable& table, std::span<TokenizedDoc> docs);

// Binary snapshot, little-endian, version 1:
//   "CRDC" u32 version, u64 dim, u64 rows, rows * (u32 provenance, dim*f64),
//   u64 entries, entries * (str token, u32 row, u32 kind)   sorted by token,
//   u64 docs, docs * (str business_id, u64 true_length, u64 n, n*u32 ids)
struct PreparedCorpus {
  EmbeddingTable table;
  std::vector<TokenizedDoc> docs;
};
void save_prepared(const std::filesystem::path& path, const EmbeddingTable& table,
                   std::span<const TokenizedDoc> docs);
PreparedCorpus load_prepared(const std::filesystem::path& path);

// Table section of the snapshot above (also embedded in CNN checkpoints).
void encode_table(binio::Writer& w, const EmbeddingTable& table);
EmbeddingTable decode_table(binio::Reader& r);

}  // namespace coldrec::textprep
