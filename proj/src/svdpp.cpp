#include "coldrec/svdpp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "coldrec/binio.hpp"
#include "coldrec/error.hpp"

namespace coldrec::svdpp {

void MfHyper::validate() const {
  if (k < 1) throw ParameterError("k must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
  if (!(regularization >= 0.0)) throw ParameterError("regularization must be >= 0");
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (!(init_scale > 0.0)) throw ParameterError("init_scale must be > 0");
}

std::optional<std::uint32_t> MfModel::find_user(std::string_view id) const {
  if (auto it = user_lookup.find(id); it != user_lookup.end()) return it->second;
  return std::nullopt;
}

std::optional<std::uint32_t> MfModel::find_item(std::string_view id) const {
  if (auto it = item_lookup.find(id); it != item_lookup.end()) return it->second;
  return std::nullopt;
}

namespace {

std::uint32_t intern(std::string_view id, std::vector<std::string>& ids,
                     std::map<std::string, std::uint32_t, std::less<>>& lookup) {
  if (auto it = lookup.find(id); it != lookup.end()) return it->second;
  const auto idx = static_cast<std::uint32_t>(ids.size());
  ids.emplace_back(id);
  lookup.emplace(std::string(id), idx);
  return idx;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) s += a[f] * b[f];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::vector<Rating> index_ratings(const corpus::ReviewSet& reviews, MfModel& model) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> slot;
  std::vector<Rating> ratings;
  std::vector<corpus::Date> dates;
  for (const auto& r : reviews.reviews()) {
    const auto u = intern(r.user_id, model.user_ids, model.user_lookup);
    const auto i = intern(r.business_id, model.item_ids, model.item_lookup);
    auto [it, inserted] = slot.try_emplace({u, i}, ratings.size());
    if (inserted) {
      ratings.push_back({u, i, r.stars});
      dates.push_back(r.date);
    } else if (!(r.date < dates[it->second])) {
      ratings[it->second].value = r.stars;
      dates[it->second] = r.date;
    }
  }
  const auto k = static_cast<std::size_t>(model.k());
  model.user_bias.assign(model.user_count(), 0.0);
  model.item_bias.assign(model.item_count(), 0.0);
  model.p.assign(model.user_count() * k, 0.0);
  model.q.assign(model.item_count() * k, 0.0);
  model.y.assign(model.item_count() * k, 0.0);
  model.rated.assign(model.user_count(), {});
  for (const auto& r : ratings) model.rated[r.user].push_back(r.item);
  for (auto& items : model.rated) std::sort(items.begin(), items.end());

  double sum = 0.0;
  for (const auto& r : ratings) sum += r.value;
  model.mu = ratings.empty() ? 0.0 : sum / static_cast<double>(ratings.size());
  return ratings;
}

void initialize_factors(MfModel& model, Rng& rng) {
  const double s = model.hyper.init_scale;
  for (auto* table : {&model.p, &model.q, &model.y}) {
    for (auto& v : *table) v = rng.uniform(-s, s);
  }
  std::fill(model.user_bias.begin(), model.user_bias.end(), 0.0);
  std::fill(model.item_bias.begin(), model.item_bias.end(), 0.0);
}

std::vector<double> user_vector(const MfModel& model, std::uint32_t u) {
  const auto pu = model.user_row(u);
  std::vector<double> z(pu.begin(), pu.end());
  const auto& items = model.rated[u];
  if (items.empty()) return z;
  const double norm = 1.0 / std::sqrt(static_cast<double>(items.size()));
  std::vector<double> acc(z.size(), 0.0);
  for (auto j : items) {
    const auto yj = model.implicit_row(j);
    for (std::size_t f = 0; f < acc.size(); ++f) acc[f] += yj[f];
  }
  for (std::size_t f = 0; f < z.size(); ++f) z[f] += norm * acc[f];
  return z;
}

double predict_known(const MfModel& model, std::uint32_t u, std::uint32_t i) {
  const auto z = user_vector(model, u);
  return model.mu + model.user_bias[u] + model.item_bias[i] + dot(model.item_row(i), z);
}

double sample_loss(const MfModel& model, const Rating& r, double reg) {
  const double e = r.value - predict_known(model, r.user, r.item);
  double penalty = model.user_bias[r.user] * model.user_bias[r.user] +
                   model.item_bias[r.item] * model.item_bias[r.item] +
                   squared_norm(model.user_row(r.user)) + squared_norm(model.item_row(r.item));
  for (auto j : model.rated[r.user]) penalty += squared_norm(model.implicit_row(j));
  return 0.5 * e * e + 0.5 * reg * penalty;
}

void sgd_step(MfModel& model, const Rating& r, double lr, double reg) {
  const auto u = r.user;
  const auto i = r.item;
  const auto k = static_cast<std::size_t>(model.k());
  const auto& items = model.rated[u];
  const double norm = items.empty() ? 0.0 : 1.0 / std::sqrt(static_cast<double>(items.size()));

  const auto z = user_vector(model, u);
  const double e =
      r.value - (model.mu + model.user_bias[u] + model.item_bias[i] + dot(model.item_row(i), z));

  model.user_bias[u] += lr * (e - reg * model.user_bias[u]);
  model.item_bias[i] += lr * (e - reg * model.item_bias[i]);

  auto pu = model.user_row(u);
  auto qi = model.item_row(i);
  const std::vector<double> q_old(qi.begin(), qi.end());
  for (std::size_t f = 0; f < k; ++f) {
    const double pf = pu[f];
    pu[f] += lr * (e * q_old[f] - reg * pf);
    qi[f] += lr * (e * z[f] - reg * q_old[f]);
  }
  for (auto j : items) {
    auto yj = model.implicit_row(j);
    for (std::size_t f = 0; f < k; ++f) yj[f] += lr * (e * norm * q_old[f] - reg * yj[f]);
  }
}

// ---------------------------------------------------------------------------
// Trainer

MfTrainer::MfTrainer(const corpus::ReviewSet& reviews, const MfHyper& hyper)
    : rng_(hyper.seed), lr_(hyper.learning_rate) {
  hyper.validate();
  if (reviews.empty()) throw ParameterError("cannot train on an empty rating set");
  model_.hyper = hyper;
  ratings_ = index_ratings(reviews, model_);
  initialize_factors(model_, rng_);
  order_.resize(ratings_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  history_.push_back({0, 0.0, train_rmse(), objective(), true});
}

namespace {

// Row-major table of user_vector(u) for every user.
std::vector<double> all_user_vectors(const MfModel& m) {
  const auto k = static_cast<std::size_t>(m.k());
  std::vector<double> out(m.user_count() * k);
  for (std::uint32_t u = 0; u < m.user_count(); ++u) {
    const auto z = user_vector(m, u);
    std::copy(z.begin(), z.end(), out.begin() + u * k);
  }
  return out;
}

double fast_error(const MfModel& m, const std::vector<double>& z, const Rating& r) {
  const auto k = static_cast<std::size_t>(m.k());
  const std::span<const double> zu(z.data() + r.user * k, k);
  return r.value - (m.mu + m.user_bias[r.user] + m.item_bias[r.item] + dot(m.item_row(r.item), zu));
}

}  // namespace

double MfTrainer::objective() const {
  const auto users = model_.user_count();
  const auto z = all_user_vectors(model_);
  std::vector<double> implicit_penalty(users, 0.0);
  for (std::uint32_t u = 0; u < users; ++u) {
    for (auto j : model_.rated[u]) implicit_penalty[u] += squared_norm(model_.implicit_row(j));
  }
  const double reg = model_.hyper.regularization;
  double total = 0.0;
  for (const auto& r : ratings_) {
    const double e = fast_error(model_, z, r);
    const double penalty = model_.user_bias[r.user] * model_.user_bias[r.user] +
                           model_.item_bias[r.item] * model_.item_bias[r.item] +
                           squared_norm(model_.user_row(r.user)) +
                           squared_norm(model_.item_row(r.item)) + implicit_penalty[r.user];
    total += 0.5 * e * e + 0.5 * reg * penalty;
  }
  return total;
}

double MfTrainer::train_rmse() const {
  const auto z = all_user_vectors(model_);
  double sse = 0.0;
  for (const auto& r : ratings_) {
    const double e = fast_error(model_, z, r);
    sse += e * e;
  }
  return std::sqrt(sse / static_cast<double>(ratings_.size()));
}

const EpochStats& MfTrainer::run_epoch() {
  const int epoch = static_cast<int>(history_.size());
  std::optional<MfModel> snapshot;
  if (model_.hyper.halve_on_increase) snapshot = model_;

  rng_.shuffle(std::span(order_));
  const double reg = model_.hyper.regularization;
  for (auto idx : order_) sgd_step(model_, ratings_[idx], lr_, reg);

  for (const auto* table : {&model_.p, &model_.q, &model_.y, &model_.user_bias, &model_.item_bias}) {
    if (!all_finite(*table)) {
      throw DivergenceError("SVD++ parameters became non-finite in epoch " +
                                std::to_string(epoch),
                            epoch);
    }
  }
  EpochStats stats{epoch, lr_, train_rmse(), objective(), true};
  if (!std::isfinite(stats.objective)) {
    throw DivergenceError("SVD++ objective became non-finite in epoch " + std::to_string(epoch),
                          epoch);
  }

  const double previous = [&] {
    for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
      if (it->accepted) return it->objective;
    }
    return stats.objective;
  }();
  if (snapshot && stats.objective > previous) {
    model_ = std::move(*snapshot);
    lr_ *= 0.5;
    stats.accepted = false;
  }
  history_.push_back(stats);
  return history_.back();
}

MfTrainResult train_mf(const corpus::ReviewSet& reviews, const MfHyper& hyper) {
  MfTrainer trainer(reviews, hyper);
  for (int e = 0; e < hyper.epochs; ++e) trainer.run_epoch();
  MfTrainResult result;
  result.history = trainer.history();
  for (auto it = result.history.rbegin(); it != result.history.rend(); ++it) {
    if (it->accepted) {
      result.final_rmse = it->rmse;
      break;
    }
  }
  result.model = std::move(trainer).release();
  return result;
}

// ---------------------------------------------------------------------------
// Prediction

std::span<const double> item_factors(const MfModel& model, std::string_view item_id) {
  const auto i = model.find_item(item_id);
  if (!i) throw NotFoundError("item '" + std::string(item_id) + "' has no factors");
  return model.item_row(*i);
}

namespace {

double finish_prediction(double raw, bool clamp) {
  return clamp ? std::clamp(raw, 1.0, 5.0) : raw;
}

void check_factor_length(const MfModel& model, std::span<const double> item) {
  if (item.size() != static_cast<std::size_t>(model.k())) {
    throw ParameterError("item factor vector has length " + std::to_string(item.size()) +
                         ", model k = " + std::to_string(model.k()));
  }
}

}  // namespace

double predict_rating(const MfModel& model, std::string_view user_id,
                      std::span<const double> item, double item_bias, bool clamp) {
  check_factor_length(model, item);
  const auto u = model.find_user(user_id);
  if (!u) return finish_prediction(model.mu + item_bias, clamp);
  const auto z = user_vector(model, *u);
  return finish_prediction(model.mu + model.user_bias[*u] + item_bias + dot(item, z), clamp);
}

RatingPredictor::RatingPredictor(const MfModel& model)
    : model_(&model), user_vectors_(all_user_vectors(model)) {}

double RatingPredictor::predict(std::string_view user_id, std::span<const double> item,
                                double item_bias, bool clamp) const {
  const auto& m = *model_;
  check_factor_length(m, item);
  const auto u = m.find_user(user_id);
  if (!u) return finish_prediction(m.mu + item_bias, clamp);
  const auto k = static_cast<std::size_t>(m.k());
  const std::span<const double> z(user_vectors_.data() + *u * k, k);
  return finish_prediction(m.mu + m.user_bias[*u] + item_bias + dot(item, z), clamp);
}

std::vector<double> mf_predictions(const MfModel& model, const corpus::ReviewSet& ratings,
                                   bool clamp) {
  std::vector<std::string> missing;
  for (const auto& id : ratings.business_order()) {
    if (!model.find_item(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "no item factors for " + std::to_string(missing.size()) + " business(es):";
    for (const auto& id : missing) msg += " " + id;
    throw NotFoundError(msg);
  }
  const RatingPredictor predictor(model);
  std::vector<double> out;
  out.reserve(ratings.size());
  for (const auto& r : ratings.reviews()) {
    const auto i = *model.find_item(r.business_id);
    out.push_back(predictor.predict(r.user_id, model.item_row(i), model.item_bias[i], clamp));
  }
  return out;
}

double mf_rmse(const MfModel& model, const corpus::ReviewSet& ratings, bool clamp) {
  if (ratings.empty()) throw ParameterError("RMSE of an empty rating set");
  const auto predictions = mf_predictions(model, ratings, clamp);
  double sse = 0.0;
  for (std::size_t n = 0; n < predictions.size(); ++n) {
    const double e = predictions[n] - ratings[n].stars;
    sse += e * e;
  }
  return std::sqrt(sse / static_cast<double>(predictions.size()));
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr std::uint32_t kMfVersion = 1;
}

std::string encode_mf(const MfModel& m) {
  binio::Writer w;
  w.magic("CRMF");
  w.u32(kMfVersion);
  w.u32(static_cast<std::uint32_t>(m.hyper.k));
  w.f64(m.hyper.learning_rate);
  w.f64(m.hyper.regularization);
  w.u32(static_cast<std::uint32_t>(m.hyper.epochs));
  w.u64(m.hyper.seed);
  w.f64(m.hyper.init_scale);
  w.u32(m.hyper.halve_on_increase ? 1 : 0);
  w.f64(m.mu);
  w.u64(m.user_count());
  for (std::uint32_t u = 0; u < m.user_count(); ++u) {
    w.str(m.user_ids[u]);
    w.f64(m.user_bias[u]);
    for (double v : m.user_row(u)) w.f64(v);
    w.u64(m.rated[u].size());
    for (auto j : m.rated[u]) w.u32(j);
  }
  w.u64(m.item_count());
  for (std::uint32_t i = 0; i < m.item_count(); ++i) {
    w.str(m.item_ids[i]);
    w.f64(m.item_bias[i]);
    for (double v : m.item_row(i)) w.f64(v);
    for (double v : m.implicit_row(i)) w.f64(v);
  }
  return w.bytes();
}

void save_mf(const MfModel& model, const std::filesystem::path& path) {
  binio::write_file(path, encode_mf(model));
}

MfModel decode_mf(std::string bytes) {
  binio::Reader r(std::move(bytes));
  r.expect_magic("CRMF");
  if (const auto v = r.u32(); v != kMfVersion) {
    throw ParseError("unsupported MF checkpoint version " + std::to_string(v));
  }
  MfModel m;
  m.hyper.k = static_cast<int>(r.u32());
  m.hyper.learning_rate = r.f64();
  m.hyper.regularization = r.f64();
  m.hyper.epochs = static_cast<int>(r.u32());
  m.hyper.seed = r.u64();
  m.hyper.init_scale = r.f64();
  m.hyper.halve_on_increase = r.u32() != 0;
  m.mu = r.f64();
  const auto k = static_cast<std::size_t>(m.hyper.k);
  if (k == 0) throw ParseError("MF checkpoint has k = 0");

  const auto users = r.u64();
  m.user_bias.reserve(users);
  m.p.reserve(users * k);
  for (std::uint64_t u = 0; u < users; ++u) {
    m.user_ids.push_back(r.str());
    m.user_lookup.emplace(m.user_ids.back(), static_cast<std::uint32_t>(u));
    m.user_bias.push_back(r.f64());
    for (std::size_t f = 0; f < k; ++f) m.p.push_back(r.f64());
    std::vector<std::uint32_t> items(r.u64());
    for (auto& j : items) j = r.u32();
    m.rated.push_back(std::move(items));
  }
  const auto items = r.u64();
  m.q.reserve(items * k);
  m.y.assign(items * k, 0.0);
  for (std::uint64_t i = 0; i < items; ++i) {
    m.item_ids.push_back(r.str());
    m.item_lookup.emplace(m.item_ids.back(), static_cast<std::uint32_t>(i));
    m.item_bias.push_back(r.f64());
    for (std::size_t f = 0; f < k; ++f) m.q.push_back(r.f64());
    for (std::size_t f = 0; f < k; ++f) m.y[i * k + f] = r.f64();
  }
  if (!r.at_end()) throw ParseError("trailing bytes in MF checkpoint");
  for (const auto& rated : m.rated) {
    for (auto j : rated) {
      if (j >= items) throw ParseError("MF checkpoint references unknown item index");
    }
  }
  return m;
}

MfModel load_mf(const std::filesystem::path& path) { return decode_mf(binio::read_file(path)); }

std::string export_mf_json(const MfModel& m) {
  using nlohmann::json;
  json out;
  out["version"] = kMfVersion;
  out["hyper"] = {{"k", m.hyper.k},
                  {"learning_rate", m.hyper.learning_rate},
                  {"regularization", m.hyper.regularization},
                  {"epochs", m.hyper.epochs},
                  {"seed", m.hyper.seed},
                  {"init_scale", m.hyper.init_scale},
                  {"halve_on_increase", m.hyper.halve_on_increase}};
  out["mu"] = m.mu;
  json users = json::array();
  for (std::uint32_t u = 0; u < m.user_count(); ++u) {
    json rated = json::array();
    for (auto j : m.rated[u]) rated.push_back(m.item_ids[j]);
    const auto row = m.user_row(u);
    users.push_back({{"id", m.user_ids[u]},
                     {"bias", m.user_bias[u]},
                     {"p", std::vector<double>(row.begin(), row.end())},
                     {"rated", rated}});
  }
  json items = json::array();
  for (std::uint32_t i = 0; i < m.item_count(); ++i) {
    const auto q = m.item_row(i);
    const auto y = m.implicit_row(i);
    items.push_back({{"id", m.item_ids[i]},
                     {"bias", m.item_bias[i]},
                     {"q", std::vector<double>(q.begin(), q.end())},
                     {"y", std::vector<double>(y.begin(), y.end())}});
  }
  out["users"] = std::move(users);
  out["items"] = std::move(items);
  return out.dump(1);
}

}  // namespace coldrec::svdpp
