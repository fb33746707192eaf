#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coldrec/corpus.hpp"

namespace coldrec::synthetic {

// Review corpus whose business descriptions spell out the businesses' true
// latent factors. Business b (id "biz000".."biz099" for 100 businesses) gets
// min_reviews + (businesses - 1 - b) reviews, so the review-count ranking is
// the id order. Each business has exactly one review with votes >= 8; its
// text opens with one level word per factor dimension, e.g. "flavorgood
// servicepoor ambiencesuperb", followed by filler. The matching embedding
// file places the level value of dimension d in component d.
struct SynthParams {
  std::size_t users = 300;
  std::size_t businesses = 100;
  std::size_t min_reviews = 10;
  double user_factor_sd = 0.7;
  double noise_sd = 0.25;
  std::size_t embed_dim = 8;
  std::uint64_t seed = 1;
};

inline constexpr std::size_t kTrueRank = 3;

struct SynthCorpus {
  corpus::ReviewSet reviews;
  std::vector<std::vector<double>> business_factors;  // per business, kTrueRank values
  std::vector<std::string> embedding_lines;           // GloVe text format
};

SynthCorpus generate(const SynthParams& params);

// Writes reviews.json, embeddings.txt and config.txt (a complete pipeline
// configuration sized for the corpus) into `dir`.
void write_bundle(const SynthParams& params, const std::filesystem::path& dir);

}  // namespace coldrec::synthetic
