#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coldrec/corpus.hpp"
#include "coldrec/rng.hpp"

namespace coldrec::svdpp {

struct MfHyper {
  int k = 20;
  double learning_rate = 0.007;
  double regularization = 0.02;
  int epochs = 30;
  std::uint64_t seed = 0;
  double init_scale = 0.1;
  // Reject an epoch that raises the objective, restore the previous
  // parameters and halve the learning rate.
  bool halve_on_increase = true;

  void validate() const;  // throws ParameterError
  bool operator==(const MfHyper&) const = default;
};

// SVD++ parameters. Users and items are dense indexes assigned in order of
// first appearance in the training reviews; factor tables are row-major
// (row = index, k columns).
struct MfModel {
  MfHyper hyper;
  double mu = 0.0;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::map<std::string, std::uint32_t, std::less<>> user_lookup;
  std::map<std::string, std::uint32_t, std::less<>> item_lookup;
  std::vector<double> user_bias;
  std::vector<double> item_bias;
  std::vector<double> p;  // user factors
  std::vector<double> q;  // item factors
  std::vector<double> y;  // implicit-feedback item factors
  std::vector<std::vector<std::uint32_t>> rated;  // N(u), ascending item index

  int k() const { return hyper.k; }
  std::size_t user_count() const { return user_ids.size(); }
  std::size_t item_count() const { return item_ids.size(); }

  std::optional<std::uint32_t> find_user(std::string_view id) const;
  std::optional<std::uint32_t> find_item(std::string_view id) const;

  std::span<const double> user_row(std::uint32_t u) const { return {p.data() + u * k(), std::size_t(k())}; }
  std::span<const double> item_row(std::uint32_t i) const { return {q.data() + i * k(), std::size_t(k())}; }
  std::span<const double> implicit_row(std::uint32_t j) const { return {y.data() + j * k(), std::size_t(k())}; }
  std::span<double> user_row(std::uint32_t u) { return {p.data() + u * k(), std::size_t(k())}; }
  std::span<double> item_row(std::uint32_t i) { return {q.data() + i * k(), std::size_t(k())}; }
  std::span<double> implicit_row(std::uint32_t j) { return {y.data() + j * k(), std::size_t(k())}; }

  bool operator==(const MfModel&) const = default;
};

struct Rating {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  double value = 0.0;
};

// Builds the user/item index of `model` from `reviews` and returns one rating
// per (user, item) pair; duplicates keep the latest-dated review (the later
// file position on equal dates). Ratings follow first occurrence of the pair.
std::vector<Rating> index_ratings(const corpus::ReviewSet& reviews, MfModel& model);

// Fills p, q, y uniformly in [-init_scale, init_scale] (users, then items for
// q, then items for y; row by row); biases start at zero.
void initialize_factors(MfModel& model, Rng& rng);

// p_u + |N(u)|^{-1/2} * sum_{j in N(u)} y_j
std::vector<double> user_vector(const MfModel& model, std::uint32_t u);

// Unclamped mu + b_u + b_i + q_i . user_vector(u)
double predict_known(const MfModel& model, std::uint32_t u, std::uint32_t i);

// Per-sample objective: 0.5*e^2 + 0.5*reg*(b_u^2 + b_i^2 + |p_u|^2 + |q_i|^2
// + sum_{j in N(u)} |y_j|^2).
double sample_loss(const MfModel& model, const Rating& r, double reg);

// One SGD step along the negative gradient of sample_loss, every parameter
// updated from the pre-step values.
void sgd_step(MfModel& model, const Rating& r, double learning_rate, double reg);

struct EpochStats {
  int epoch = 0;              // 0 = after initialization
  double learning_rate = 0.0; // rate used during the epoch
  double rmse = 0.0;          // unclamped training RMSE after the epoch
  double objective = 0.0;     // sum of sample_loss after the epoch
  bool accepted = true;       // false when rolled back
};

// Stepwise trainer. Construction validates, indexes and initializes.
class MfTrainer {
 public:
  MfTrainer(const corpus::ReviewSet& reviews, const MfHyper& hyper);

  const MfModel& model() const { return model_; }
  const std::vector<Rating>& ratings() const { return ratings_; }
  const std::vector<EpochStats>& history() const { return history_; }
  double learning_rate() const { return lr_; }

  // Shuffles the rating order with the model seed, applies one SGD pass and
  // evaluates. Throws DivergenceError on non-finite parameters.
  const EpochStats& run_epoch();

  MfModel release() && { return std::move(model_); }

 private:
  double objective() const;
  double train_rmse() const;

  MfModel model_;
  std::vector<Rating> ratings_;
  std::vector<std::uint32_t> order_;
  std::vector<EpochStats> history_;
  Rng rng_;
  double lr_;
};

struct MfTrainResult {
  MfModel model;
  std::vector<EpochStats> history;  // entry 0 is the initial state
  double final_rmse = 0.0;
};

// Throws ParameterError on empty input.
MfTrainResult train_mf(const corpus::ReviewSet& reviews, const MfHyper& hyper);

// Item factors q_i, returned by reference. NotFoundError for unknown items.
std::span<const double> item_factors(const MfModel& model, std::string_view item_id);

// mu + b_u + item_bias + item_factors . user_vector(u), clamped to [1,5]
// when `clamp`. Unknown users fall back to mu + item_bias.
double predict_rating(const MfModel& model, std::string_view user_id,
                      std::span<const double> item_factors, double item_bias,
                      bool clamp = true);

// predict_rating with every user vector precomputed.
class RatingPredictor {
 public:
  explicit RatingPredictor(const MfModel& model);
  double predict(std::string_view user_id, std::span<const double> item_factors,
                 double item_bias, bool clamp = true) const;

 private:
  const MfModel* model_;
  std::vector<double> user_vectors_;
};

// Prediction for every review from the model's own item parameters.
// NotFoundError listing every missing business id.
std::vector<double> mf_predictions(const MfModel& model, const corpus::ReviewSet& ratings,
                                   bool clamp = true);
double mf_rmse(const MfModel& model, const corpus::ReviewSet& ratings, bool clamp = true);

// Binary checkpoint, little-endian, version 1:
//   "CRMF" u32 version
//   u32 k, f64 learning_rate, f64 regularization, u32 epochs, u64 seed,
//   f64 init_scale, u32 halve_on_increase
//   f64 mu
//   u64 users; per user: str id, f64 bias, k*f64 p, u64 n, n*u32 rated items
//   u64 items; per item: str id, f64 bias, k*f64 q, k*f64 y
// where str = u64 length + bytes.
void save_mf(const MfModel& model, const std::filesystem::path& path);
std::string encode_mf(const MfModel& model);
MfModel load_mf(const std::filesystem::path& path);
MfModel decode_mf(std::string bytes);
std::string export_mf_json(const MfModel& model);

}  // namespace coldrec::svdpp
