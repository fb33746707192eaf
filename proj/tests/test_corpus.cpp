#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "coldrec/corpus.hpp"
#include "coldrec/error.hpp"
#include "coldrec/rng.hpp"
#include "support/review_builder.hpp"
#include "support/temp_dir.hpp"

using namespace coldrec;
using namespace coldrec::corpus;
using coldrec::testing::review;
using coldrec::testing::TempDir;

namespace {

const char* kThreeLines =
    R"({"user_id":"u1","business_id":"b1","stars":4,"votes":{"funny":1,"useful":3,"cool":0},"text":"Great pizza","date":"2011-01-02"})"
    "\n"
    R"({"user_id":"u2","business_id":"b1","stars":2.5,"votes":{"funny":0,"useful":7,"cool":2},"text":"meh","date":"2011-03-04"})"
    "\n"
    R"({"user_id":"u1","business_id":"b2","stars":5,"votes":{"funny":0,"useful":0,"cool":0},"text":"ok","date":"2012-05-06"})"
    "\n";

}  // namespace

TEST_CASE("load_reviews counts reviews, users and businesses") {
  TempDir dir;
  SUBCASE("three-line fixture") {
    const auto set = load_reviews(dir.write("r.json", kThreeLines));
    CHECK(set.size() == 3);
    CHECK(set.user_count() == 2);
    CHECK(set.business_count() == 2);
    CHECK(set[0].votes == 4);
    CHECK(set[1].votes == 9);
    CHECK(set[1].stars == 2.5);
    CHECK(set[2].date == Date{2012, 5, 6});
  }
  SUBCASE("empty file") {
    const auto set = load_reviews(dir.write("empty.json", ""));
    CHECK(set.size() == 0);
    CHECK(set.user_count() == 0);
    CHECK(set.business_count() == 0);
  }
  SUBCASE("single vote category") {
    LoadOptions opt;
    opt.votes_category = "useful";
    const auto set = load_reviews(dir.write("r.json", kThreeLines), opt);
    CHECK(set[0].votes == 3);
    CHECK(set[1].votes == 7);
  }
  SUBCASE("custom field names") {
    const auto fields = dir.write("fields.txt", "user_id = uid\nbusiness_id = bid\n");
    LoadOptions opt;
    opt.fields = FieldNames::load(fields);
    const auto set = load_reviews(
        dir.write("r.json",
                  R"({"uid":"a","bid":"b","stars":3,"votes":2,"text":"x","date":"2010-10-10"})"),
        opt);
    REQUIRE(set.size() == 1);
    CHECK(set[0].user_id == "a");
    CHECK(set[0].votes == 2);
  }
}

TEST_CASE("load_reviews error handling") {
  TempDir dir;
  const std::string bad = std::string(kThreeLines) + "{not json}\n" +
                          R"({"user_id":"u9","business_id":"b9","stars":7,"votes":0,"text":"","date":"2011-01-01"})" +
                          "\n";
  const auto path = dir.write("bad.json", bad);

  SUBCASE("strict mode names the line") {
    try {
      load_reviews(path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
  }
  SUBCASE("lenient mode skips and counts") {
    LoadOptions opt;
    opt.strict = false;
    LoadStats stats;
    const auto set = load_reviews(path, opt, &stats);
    CHECK(set.size() == 3);
    CHECK(stats.skipped == 2);
    CHECK(stats.lines == 5);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_reviews(dir / "nope.json"), IoError); }
  SUBCASE("invariants enforced") {
    for (const char* line :
         {R"({"user_id":"","business_id":"b","stars":3,"votes":0,"text":"","date":"2011-01-01"})",
          R"({"user_id":"u","business_id":"b","stars":0.5,"votes":0,"text":"","date":"2011-01-01"})",
          R"({"user_id":"u","business_id":"b","stars":3,"votes":{"useful":-1},"text":"","date":"2011-01-01"})",
          R"({"user_id":"u","business_id":"b","stars":3,"votes":0,"text":"","date":"2011-13-01"})"}) {
      std::istringstream in(line);
      CHECK_THROWS_AS(read_reviews(in), ParseError);
    }
  }
}

TEST_CASE("ReviewSet indexes cover every review exactly once") {
  Rng rng(7);
  std::vector<Review> reviews;
  for (int n = 0; n < 300; ++n) {
    reviews.push_back(review("u" + std::to_string(rng.below(40)), "b" + std::to_string(rng.below(25)),
                             1.0 + static_cast<double>(rng.below(5))));
  }
  const ReviewSet set(reviews);
  for (const auto* index : {&set.by_user(), &set.by_business()}) {
    std::vector<std::size_t> seen;
    for (const auto& [id, positions] : *index) {
      for (auto p : positions) {
        const auto& r = set[p];
        CHECK((index == &set.by_user() ? r.user_id : r.business_id) == id);
        seen.push_back(p);
      }
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(set.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    CHECK(seen == all);
  }
}

TEST_CASE("load -> write -> load round-trips") {
  TempDir dir;
  auto first = load_reviews(dir.write("r.json", kThreeLines));
  std::vector<Review> extra = first.reviews();
  extra.push_back(review("u\"3", "b,3", 1.5, 12, "2013-12-31", "line\nbreak \xc3\xa9 \"quoted\""));
  const ReviewSet original(extra);
  write_reviews(original, dir / "out.json");
  const auto again = load_reviews(dir / "out.json");
  CHECK(again == original);
  CHECK(again.user_count() == original.user_count());
  CHECK(again.business_count() == original.business_count());
}

TEST_CASE("select_description") {
  SUBCASE("single review") {
    const ReviewSet set({review("u1", "b", 3, 0)});
    CHECK(&select_description("b", set) == &set[0]);
  }
  SUBCASE("most votes wins") {
    const ReviewSet set({review("u1", "b", 3, 3), review("u2", "b", 3, 7), review("u3", "b", 3, 2)});
    CHECK(select_description("b", set).votes == 7);
  }
  SUBCASE("ties go to the earliest date, then smallest user") {
    const ReviewSet set({review("u1", "b", 3, 4, "2011-01-02"), review("u2", "b", 3, 4, "2011-01-01")});
    CHECK(select_description("b", set).date == Date{2011, 1, 1});
    const ReviewSet same_day({review("zz", "b", 3, 4, "2011-01-01"), review("aa", "b", 3, 4, "2011-01-01")});
    CHECK(select_description("b", same_day).user_id == "aa");
  }
  SUBCASE("unknown business") {
    const ReviewSet set({review("u1", "b", 3)});
    CHECK_THROWS_AS(select_description("x", set), NotFoundError);
  }
}

TEST_CASE("review_distribution") {
  SUBCASE("empty") { CHECK(review_distribution(ReviewSet{}, Axis::user).empty()); }
  SUBCASE("hand-counted fixture") {
    const ReviewSet set({review("u2", "b1", 3), review("u1", "b1", 3), review("u1", "b2", 3)});
    const auto users = review_distribution(set, Axis::user);
    CHECK(users == std::vector<HistogramRow>{{"u1", 2}, {"u2", 1}});
    const auto businesses = review_distribution(set, Axis::business);
    CHECK(businesses == std::vector<HistogramRow>{{"b1", 2}, {"b2", 1}});
    std::ostringstream csv;
    write_histogram_csv(users, csv);
    CHECK(csv.str() == "entity_id,count\nu1,2\nu2,1\n");
  }
  SUBCASE("counts sum to the corpus size on both axes") {
    Rng rng(3);
    std::vector<Review> reviews;
    for (int n = 0; n < 500; ++n) {
      reviews.push_back(review("u" + std::to_string(rng.below(60)), "b" + std::to_string(rng.below(30)), 3));
    }
    const ReviewSet set(reviews);
    for (auto axis : {Axis::user, Axis::business}) {
      std::size_t total = 0;
      for (const auto& row : review_distribution(set, axis)) total += row.count;
      CHECK(total == set.size());
    }
  }
}

namespace {

// Reference partition: sort (count desc, id asc) and slice with integer
// arithmetic on percentages.
struct OracleSplit {
  std::set<std::string> test1, test2;
};

OracleSplit oracle_split(const std::vector<Review>& reviews, int test1_pct, int lo_pct, int hi_pct,
                         std::int64_t min_votes) {
  std::map<std::string, int> counts;
  std::map<std::string, std::int64_t> max_votes;
  for (const auto& r : reviews) {
    ++counts[r.business_id];
    max_votes[r.business_id] = std::max(max_votes[r.business_id], r.votes);
  }
  std::vector<std::pair<int, std::string>> ranking;
  for (const auto& [id, c] : counts) ranking.push_back({-c, id});
  std::sort(ranking.begin(), ranking.end());
  const int b = static_cast<int>(ranking.size());
  OracleSplit out;
  for (int rank = 0; rank < b; ++rank) {
    const auto& id = ranking[rank].second;
    if (max_votes[id] < min_votes) continue;
    if (rank >= b - b * test1_pct / 100) out.test1.insert(id);
    else if (rank >= b * lo_pct / 100 && rank < b * hi_pct / 100) out.test2.insert(id);
  }
  return out;
}

std::set<std::string> businesses(const ReviewSet& s) {
  return {s.business_order().begin(), s.business_order().end()};
}

}  // namespace

TEST_CASE("split_dataset matches the ranking oracle") {
  SUBCASE("20-business fixture") {
    // Business i has 21 - i reviews; every third business lacks a 5-vote review.
    std::vector<Review> reviews;
    for (int i = 0; i < 20; ++i) {
      const std::string id = "b" + std::string(i < 10 ? "0" : "") + std::to_string(i);
      for (int n = 0; n < 21 - i; ++n) {
        reviews.push_back(review("u" + std::to_string(n), id, 3, (i % 3 == 0) ? 1 : (n == 0 ? 5 : 0)));
      }
    }
    const ReviewSet set(reviews);
    const auto split = split_dataset(set);
    const auto expected = oracle_split(reviews, 15, 5, 10, 5);
    CHECK(businesses(split.test1) == expected.test1);
    CHECK(businesses(split.test2) == expected.test2);
    // Ranks 17..19 are the bottom three; b18 lacks votes. The band is rank 1.
    CHECK(expected.test1 == std::set<std::string>{"b17", "b19"});
    CHECK(expected.test2 == std::set<std::string>{"b01"});
    CHECK(split.train.size() + split.test1.size() + split.test2.size() == set.size());
  }

  SUBCASE("random corpora") {
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<Review> reviews;
      const auto n_business = 10 + rng.below(120);
      for (std::uint64_t b = 0; b < n_business; ++b) {
        const auto n = 1 + rng.below(12);
        for (std::uint64_t k = 0; k < n; ++k) {
          reviews.push_back(review("u" + std::to_string(rng.below(50)), "biz" + std::to_string(b), 3,
                                   static_cast<std::int64_t>(rng.below(8))));
        }
      }
      Rng order(trial);
      order.shuffle(std::span(reviews));
      const ReviewSet set(reviews);
      const auto split = split_dataset(set);
      const auto expected = oracle_split(reviews, 15, 5, 10, 5);
      CHECK(businesses(split.test1) == expected.test1);
      CHECK(businesses(split.test2) == expected.test2);

      const auto train_b = businesses(split.train);
      for (const auto* t : {&split.test1, &split.test2}) {
        for (const auto& id : businesses(*t)) CHECK_FALSE(train_b.contains(id));
      }
      for (const auto& id : businesses(split.test1)) CHECK_FALSE(businesses(split.test2).contains(id));
      CHECK(split.train.size() + split.test1.size() + split.test2.size() == set.size());
      // Index manifests point back at the source reviews.
      for (std::size_t i = 0; i < split.test1_index.size(); ++i) {
        CHECK(set[split.test1_index[i]] == split.test1[i]);
      }
    }
  }
}

TEST_CASE("split_dataset edge cases") {
  SUBCASE("no business reaches min_votes") {
    std::vector<Review> reviews;
    for (int b = 0; b < 30; ++b) reviews.push_back(review("u", "b" + std::to_string(b), 3, 4));
    const ReviewSet set(reviews);
    const auto split = split_dataset(set);
    CHECK(split.test1.empty());
    CHECK(split.test2.empty());
    CHECK(split.train == set);
  }
  SUBCASE("parameter errors") {
    const ReviewSet set({review("u", "b", 3)});
    CHECK_THROWS_AS(split_dataset(set, {0.0, 0.05, 0.1, 5}), ParameterError);
    CHECK_THROWS_AS(split_dataset(set, {1.2, 0.05, 0.1, 5}), ParameterError);
    CHECK_THROWS_AS(split_dataset(set, {0.15, 0.1, 0.05, 5}), ParameterError);
    CHECK_THROWS_AS(split_dataset(set, {0.5, 0.2, 0.6, 5}), ParameterError);
    CHECK_THROWS_AS(split_dataset(ReviewSet{}), ParameterError);
  }
}

TEST_CASE("index manifests round-trip") {
  TempDir dir;
  const std::vector<std::size_t> idx{0, 4, 17, 230000};
  write_index_manifest(idx, dir / "m.idx");
  CHECK(read_index_manifest(dir / "m.idx") == idx);
  dir.write("bad.idx", "1\nx\n");
  CHECK_THROWS_AS(read_index_manifest(dir / "bad.idx"), ParseError);
}
