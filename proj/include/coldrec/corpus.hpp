#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace coldrec::corpus {

struct Date {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;

  // Accepts YYYY-MM-DD; throws ParseError otherwise.
  static Date parse(std::string_view text);
  std::string to_string() const;

  auto operator<=>(const Date&) const = default;
};

struct Review {
  std::string user_id;
  std::string business_id;
  double stars = 0.0;       // in [1, 5]
  std::int64_t votes = 0;   // total votes from other users
  std::string text;
  Date date;

  bool operator==(const Review&) const = default;
};

// Immutable review corpus with per-business and per-user position indexes.
class ReviewSet {
 public:
  using Index = std::map<std::string, std::vector<std::size_t>, std::less<>>;

  ReviewSet() = default;
  explicit ReviewSet(std::vector<Review> reviews);

  const std::vector<Review>& reviews() const { return reviews_; }
  const Review& operator[](std::size_t i) const { return reviews_[i]; }
  std::size_t size() const { return reviews_.size(); }
  bool empty() const { return reviews_.empty(); }

  std::size_t user_count() const { return by_user_.size(); }
  std::size_t business_count() const { return by_business_.size(); }

  const Index& by_business() const { return by_business_; }
  const Index& by_user() const { return by_user_; }

  // Positions of the reviews of a business/user; empty when unknown.
  std::span<const std::size_t> business_positions(std::string_view id) const;
  std::span<const std::size_t> user_positions(std::string_view id) const;

  // Business ids in order of first appearance.
  const std::vector<std::string>& business_order() const { return business_order_; }

  // New set holding the reviews at `positions`, in the given order.
  ReviewSet subset(std::span<const std::size_t> positions) const;

  bool operator==(const ReviewSet& other) const { return reviews_ == other.reviews_; }

 private:
  std::vector<Review> reviews_;
  Index by_business_;
  Index by_user_;
  std::vector<std::string> business_order_;
};

struct FieldNames {
  std::string user_id = "user_id";
  std::string business_id = "business_id";
  std::string stars = "stars";
  std::string votes = "votes";
  std::string text = "text";
  std::string date = "date";

  // Reads `user_id = uid` style overrides from a key-value file.
  static FieldNames load(const std::filesystem::path& path);
};

struct LoadOptions {
  FieldNames fields;
  bool strict = true;
  // Empty: votes is the sum of every named vote count. Otherwise only the
  // named category (e.g. "useful") is counted.
  std::string votes_category;
};

struct LoadStats {
  std::size_t lines = 0;    // non-blank lines seen
  std::size_t skipped = 0;  // malformed lines dropped in lenient mode
};

// One JSON object per line; blank lines are ignored. Strict mode throws a
// ParseError naming the 1-based line number of the first malformed record.
ReviewSet load_reviews(const std::filesystem::path& path, const LoadOptions& options = {},
                       LoadStats* stats = nullptr);
ReviewSet read_reviews(std::istream& in, const LoadOptions& options = {},
                       LoadStats* stats = nullptr);

// JSON lines; votes are written as a single integer total.
void write_reviews(const ReviewSet& set, const std::filesystem::path& path,
                   const FieldNames& fields = {});
void write_reviews(const ReviewSet& set, std::ostream& out, const FieldNames& fields = {});

// The review with the most votes; ties go to the earliest date, then the
// smallest user_id. Throws NotFoundError for an unknown business.
const Review& select_description(std::string_view business_id, const ReviewSet& set);

struct SplitParams {
  double test1_frac = 0.15;  // bottom of the review-count ranking
  double test2_lo = 0.05;    // band (lo, hi] measured from the top
  double test2_hi = 0.10;
  std::int64_t min_votes = 5;
};

struct Split {
  ReviewSet train;
  ReviewSet test1;
  ReviewSet test2;
  // Positions into the source set, ascending.
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test1_index;
  std::vector<std::size_t> test2_index;
};

// Cold-start split with business-disjoint train/test sets. Businesses are
// ranked by review count descending, ties by business_id ascending. A
// business of ranking size B enters test1 when its rank lies in the last
// floor(test1_frac*B) places, or test2 when its rank lies in
// [floor(lo*B), floor(hi*B)), and it has a review with votes >= min_votes.
// Every other review is training data.
Split split_dataset(const ReviewSet& set, const SplitParams& params = {});

enum class Axis { user, business };

struct HistogramRow {
  std::string entity_id;
  std::size_t count = 0;
  bool operator==(const HistogramRow&) const = default;
};

// Review counts per entity, descending; equal counts ordered by id.
std::vector<HistogramRow> review_distribution(const ReviewSet& set, Axis axis);

void write_histogram_csv(std::span<const HistogramRow> rows, std::ostream& out);
void write_histogram_csv(std::span<const HistogramRow> rows,
                         const std::filesystem::path& path);

// Manifest of review positions, one decimal index per line.
void write_index_manifest(std::span<const std::size_t> positions,
                          const std::filesystem::path& path);
std::vector<std::size_t> read_index_manifest(const std::filesystem::path& path);

}  // namespace coldrec::corpus
