#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "coldrec/rng.hpp"
#include "coldrec/textprep.hpp"

namespace coldrec::convnet {

struct CnnConfig {
  std::size_t embed_dim = 300;
  std::size_t num_filters = 50;
  std::size_t window = 4;
  std::size_t output_dim = 20;
  double learning_rate = 0.001;
  std::size_t batch_size = 64;
  int max_epochs = 50;
  double validation_frac = 0.10;
  std::uint64_t seed = 0;

  void validate() const;  // throws ParameterError
  bool operator==(const CnnConfig&) const = default;
};

// Embedding lookup -> same-length convolution with ReLU -> max over time ->
// dense output. Filter f is stored as `window` consecutive embedding-sized
// slices; slice o multiplies the input row at offset o in the window.
struct CnnModel {
  CnnConfig config;
  textprep::EmbeddingTable embedding;
  std::vector<double> filters;      // num_filters x (window * embed_dim)
  std::vector<double> filter_bias;  // num_filters
  std::vector<double> dense_w;      // output_dim x num_filters
  std::vector<double> dense_b;      // output_dim
  // Bumped by every parameter update; forward caches remember it.
  std::uint64_t generation = 0;

  std::span<const double> filter(std::size_t f) const {
    const auto width = config.window * config.embed_dim;
    return {filters.data() + f * width, width};
  }

  bool operator==(const CnnModel&) const = default;
};

// Glorot-uniform filters and dense weights (filters first), zero biases.
CnnModel init_cnn(const CnnConfig& config, textprep::EmbeddingTable embedding, Rng& rng);

struct ForwardCache {
  const CnnModel* model = nullptr;
  std::uint64_t generation = 0;
  std::vector<std::uint32_t> tokens;  // the doc's real tokens
  std::vector<std::size_t> argmax;    // per filter, first maximal position
  std::vector<double> pre_at_max;     // pre-activation at argmax
  std::vector<double> pooled;         // per filter maximum of ReLU output
};

struct ForwardResult {
  std::vector<double> prediction;
  ForwardCache cache;
};

// Throws ParameterError for an empty or malformed doc. Positions at or past
// true_length see an all-zero window, so they are evaluated once.
ForwardResult forward(const CnnModel& model, const textprep::TokenizedDoc& doc);
std::vector<double> predict_factors(const CnnModel& model, const textprep::TokenizedDoc& doc);

// Full N x num_filters post-ReLU convolution map, row-major, evaluated at
// every position without shortcuts.
std::vector<double> conv_map(const CnnModel& model, const textprep::TokenizedDoc& doc);

// sqrt(mean((prediction - target)^2)); ParameterError on length mismatch.
double loss(std::span<const double> prediction, std::span<const double> target);

struct Gradients {
  std::vector<double> filters;
  std::vector<double> filter_bias;
  std::vector<double> dense_w;
  std::vector<double> dense_b;
  std::map<std::uint32_t, std::vector<double>> embedding;  // never the pad row

  explicit Gradients(const CnnModel& model);
};

// Gradient of mean((prediction - target)^2) for the doc behind `cache`,
// added to `acc`. Throws ContractError when the cache does not belong to the
// current parameters of `model`.
void accumulate_gradients(const CnnModel& model, const ForwardCache& cache,
                          std::span<const double> prediction, std::span<const double> target,
                          Gradients& acc);
Gradients backward(const CnnModel& model, const ForwardCache& cache,
                   std::span<const double> prediction, std::span<const double> target);

// params -= scale * grads; the pad row is untouched.
void apply_gradients(CnnModel& model, const Gradients& grads, double scale);

struct EpochRecord {
  int epoch = 0;  // 0 = before training
  double train_rmse = 0.0;
  double val_rmse = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct CnnTrainResult {
  CnnModel best_model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

using TargetMap = std::map<std::string, std::vector<double>, std::less<>>;

// Minibatch SGD on mean squared error. The seeded generator first initializes
// the network, then shuffles the docs once (the last validation_frac become
// the validation set), then reshuffles the training docs every epoch. Returns
// the snapshot with the lowest validation RMSE (earliest on ties).
CnnTrainResult train_cnn(std::span<const textprep::TokenizedDoc> docs, const TargetMap& targets,
                         const CnnConfig& config, textprep::EmbeddingTable embedding);

// RMSE over all components of all docs.
double dataset_rmse(const CnnModel& model, std::span<const textprep::TokenizedDoc> docs,
                    const TargetMap& targets);

// Binary checkpoint, little-endian, version 1:
//   "CRCN" u32 version
//   u64 embed_dim, u64 num_filters, u64 window, u64 output_dim,
//   f64 learning_rate, u64 batch_size, u64 max_epochs, f64 validation_frac,
//   u64 seed
//   embedding table section (see textprep::encode_table)
//   f64s filters, f64s filter_bias, f64s dense_w, f64s dense_b
// where f64s = u64 count + values.
void save_cnn(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_cnn(const std::filesystem::path& path);

// CSV with header `epoch,train_rmse,val_rmse`.
void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path);

}  // namespace coldrec::convnet
