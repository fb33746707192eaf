#include "coldrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "coldrec/error.hpp"
#include "coldrec/format.hpp"
#include "coldrec/rng.hpp"

namespace coldrec::synthetic {

namespace {

constexpr const char* kDimensions[kTrueRank] = {"flavor", "service", "ambience"};
constexpr const char* kLevels[] = {"awful", "poor", "plain", "good", "superb"};
constexpr double kLevelValues[] = {-1.0, -0.5, 0.0, 0.5, 1.0};
constexpr std::size_t kLevelCount = 5;
constexpr const char* kFiller[] = {"the",  "food",  "was",   "and",   "place", "staff",
                                   "we",   "really", "would", "come",  "back",  "restaurant",
                                   "menu", "price", "table", "night", "with",  "friends"};
constexpr std::size_t kFillerCount = sizeof(kFiller) / sizeof(kFiller[0]);

double normal(Rng& rng) {
  const double u1 = 1.0 - rng.uniform01();
  const double u2 = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string filler(Rng& rng, std::size_t words) {
  std::string out;
  for (std::size_t w = 0; w < words; ++w) {
    if (!out.empty()) out += ' ';
    out += kFiller[rng.below(kFillerCount)];
  }
  return out;
}

std::string pad_id(std::size_t n) {
  std::string s = std::to_string(n);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

std::string embedding_line(const std::string& token, const std::vector<double>& v) {
  std::string line = token;
  for (double x : v) line += ' ' + format_real(x);
  return line;
}

}  // namespace

SynthCorpus generate(const SynthParams& p) {
  if (p.users == 0 || p.businesses == 0) throw ParameterError("synthetic corpus needs users and businesses");
  if (p.embed_dim < 2 * kTrueRank) {
    throw ParameterError("synthetic embed_dim must be at least " + std::to_string(2 * kTrueRank));
  }
  if (p.min_reviews + p.businesses - 1 > p.users) {
    throw ParameterError("not enough users for distinct reviewers per business");
  }
  Rng rng(p.seed);
  SynthCorpus out;

  std::vector<std::vector<double>> user_factors(p.users, std::vector<double>(kTrueRank));
  std::vector<double> user_bias(p.users);
  for (std::size_t u = 0; u < p.users; ++u) {
    for (auto& x : user_factors[u]) x = p.user_factor_sd * normal(rng);
    user_bias[u] = 0.3 * normal(rng);
  }

  std::vector<corpus::Review> reviews;
  std::vector<std::size_t> reviewers(p.users);
  for (std::size_t b = 0; b < p.businesses; ++b) {
    const std::string id = "biz" + pad_id(b);
    std::vector<double> v(kTrueRank);
    std::string description;
    for (std::size_t d = 0; d < kTrueRank; ++d) {
      const auto level = rng.below(kLevelCount);
      v[d] = kLevelValues[level];
      description += std::string(description.empty() ? "" : " ") + kDimensions[d] + kLevels[level];
    }
    description += ' ' + filler(rng, 4 + rng.below(4));
    // Some descriptions carry a misspelled or unknown word.
    const auto extra = rng.below(4);
    if (extra == 0) description += " restaurnt";
    if (extra == 1) description += " zqxjv";
    out.business_factors.push_back(v);

    const std::size_t count = p.min_reviews + (p.businesses - 1 - b);
    std::iota(reviewers.begin(), reviewers.end(), std::size_t{0});
    for (std::size_t n = 0; n < count; ++n) {
      std::swap(reviewers[n], reviewers[n + rng.below(p.users - n)]);
      const auto u = reviewers[n];
      double r = 3.0 + user_bias[u] + p.noise_sd * normal(rng);
      for (std::size_t d = 0; d < kTrueRank; ++d) r += user_factors[u][d] * v[d];
      r = std::clamp(std::round(r * 100.0) / 100.0, 1.0, 5.0);
      corpus::Date date{2010 + static_cast<int>(rng.below(3)), 1 + static_cast<unsigned>(rng.below(12)),
                        1 + static_cast<unsigned>(rng.below(28))};
      const bool describes = n == 0;
      reviews.push_back({"user" + pad_id(u), id, r,
                         describes ? 8 + static_cast<std::int64_t>(rng.below(5))
                                   : static_cast<std::int64_t>(rng.below(4)),
                         describes ? description : filler(rng, 5 + rng.below(8)), date});
    }
  }
  rng.shuffle(std::span(reviews));
  out.reviews = corpus::ReviewSet(std::move(reviews));

  for (std::size_t d = 0; d < kTrueRank; ++d) {
    for (std::size_t l = 0; l < kLevelCount; ++l) {
      std::vector<double> e(p.embed_dim, 0.0);
      e[d] = kLevelValues[l];
      e[kTrueRank + d] = 0.5;
      for (std::size_t c = 2 * kTrueRank; c < p.embed_dim; ++c) e[c] = rng.uniform(-0.05, 0.05);
      out.embedding_lines.push_back(embedding_line(std::string(kDimensions[d]) + kLevels[l], e));
    }
  }
  for (std::size_t w = 0; w < kFillerCount; ++w) {
    std::vector<double> e(p.embed_dim, 0.0);
    for (std::size_t c = 2 * kTrueRank; c < p.embed_dim; ++c) e[c] = rng.uniform(-0.3, 0.3);
    out.embedding_lines.push_back(embedding_line(kFiller[w], e));
  }
  return out;
}

void write_bundle(const SynthParams& params, const std::filesystem::path& dir) {
  const auto corpus = generate(params);
  std::filesystem::create_directories(dir);
  corpus::write_reviews(corpus.reviews, dir / "reviews.json");
  {
    std::ofstream out(dir / "embeddings.txt", std::ios::binary | std::ios::trunc);
    for (const auto& line : corpus.embedding_lines) out << line << '\n';
    if (!out) throw IoError("cannot write " + (dir / "embeddings.txt").string());
  }
  std::ofstream cfg(dir / "config.txt", std::ios::binary | std::ios::trunc);
  cfg << "# Synthetic benchmark (" << params.businesses << " businesses, " << params.users
      << " users, seed " << params.seed << ")\n"
      << "reviews = reviews.json\n"
      << "embeddings = embeddings.txt\n"
      << "seed = 7\n"
      << "\n"
      << "mf.k = 3\n"
      << "mf.learning_rate = 0.02\n"
      << "mf.epochs = 40\n"
      << "\n"
      << "cnn.embed_dim = " << params.embed_dim << "\n"
      << "cnn.num_filters = 16\n"
      << "cnn.window = 4\n"
      << "cnn.learning_rate = 0.05\n"
      << "cnn.batch_size = 8\n"
      << "cnn.max_epochs = 100\n"
      << "\n"
      << "baseline.runs = 100\n";
  if (!cfg) throw IoError("cannot write " + (dir / "config.txt").string());
}

}  // namespace coldrec::synthetic
