#include "coldrec/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "coldrec/binio.hpp"
#include "coldrec/error.hpp"
#include "coldrec/format.hpp"

namespace coldrec::convnet {

using textprep::EmbeddingTable;
using textprep::TokenizedDoc;

void CnnConfig::validate() const {
  if (embed_dim < 1) throw ParameterError("embed_dim must be >= 1");
  if (num_filters < 1) throw ParameterError("num_filters must be >= 1");
  if (window < 1) throw ParameterError("window must be >= 1");
  if (output_dim < 1) throw ParameterError("output_dim must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (max_epochs < 1) throw ParameterError("max_epochs must be >= 1");
  if (!(validation_frac > 0.0 && validation_frac < 1.0)) {
    throw ParameterError("validation_frac must lie in (0,1)");
  }
}

namespace {

// Fixed four-way partial sums; the summation order is part of the
// reproducibility contract.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void check_doc(const CnnModel& model, const TokenizedDoc& doc) {
  if (doc.true_length == 0) {
    throw ParameterError("document '" + doc.business_id + "' has no tokens");
  }
  if (doc.token_ids.size() < doc.true_length) {
    throw ParameterError("document '" + doc.business_id + "' is shorter than its true length");
  }
  const auto rows = model.embedding.rows();
  for (std::size_t t = 0; t < doc.token_ids.size(); ++t) {
    const auto id = doc.token_ids[t];
    if (id >= rows) {
      throw ParameterError("document '" + doc.business_id + "' references a missing row");
    }
    if (t >= doc.true_length && id != EmbeddingTable::kPadRow) {
      throw ParameterError("document '" + doc.business_id + "' has tokens past its length");
    }
  }
}

// Pre-activation of filter f at position t over `tokens` (positions past the
// end are zero rows).
double pre_activation(const CnnModel& m, std::span<const std::uint32_t> tokens, std::size_t t,
                      std::size_t f) {
  const auto dim = m.config.embed_dim;
  const double* w = m.filters.data() + f * m.config.window * dim;
  double s = m.filter_bias[f];
  for (std::size_t o = 0; o < m.config.window && t + o < tokens.size(); ++o) {
    const auto id = tokens[t + o];
    if (id == EmbeddingTable::kPadRow) continue;
    s += dot(m.embedding.row(id).data(), w + o * dim, dim);
  }
  return s;
}

void glorot(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w) v = rng.uniform(-bound, bound);
}

}  // namespace

CnnModel init_cnn(const CnnConfig& config, EmbeddingTable embedding, Rng& rng) {
  config.validate();
  if (embedding.dim() != config.embed_dim) {
    throw ParameterError("embedding dimension " + std::to_string(embedding.dim()) +
                         " does not match embed_dim " + std::to_string(config.embed_dim));
  }
  CnnModel m{config, std::move(embedding), {}, {}, {}, {}, 0};
  const auto width = config.window * config.embed_dim;
  m.filters.resize(config.num_filters * width);
  m.filter_bias.assign(config.num_filters, 0.0);
  m.dense_w.resize(config.output_dim * config.num_filters);
  m.dense_b.assign(config.output_dim, 0.0);
  glorot(m.filters, width, config.num_filters, rng);
  glorot(m.dense_w, config.num_filters, config.output_dim, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Forward

ForwardResult forward(const CnnModel& m, const TokenizedDoc& doc) {
  check_doc(m, doc);
  const auto& cfg = m.config;
  ForwardResult out;
  auto& c = out.cache;
  c.model = &m;
  c.generation = m.generation;
  c.tokens.assign(doc.token_ids.begin(), doc.token_ids.begin() + doc.true_length);
  c.argmax.assign(cfg.num_filters, 0);
  c.pre_at_max.assign(cfg.num_filters, 0.0);
  c.pooled.assign(cfg.num_filters, 0.0);

  const bool has_padding = doc.token_ids.size() > doc.true_length;
  for (std::size_t f = 0; f < cfg.num_filters; ++f) {
    double best = -1.0;
    for (std::size_t t = 0; t < c.tokens.size(); ++t) {
      const double pre = pre_activation(m, c.tokens, t, f);
      const double act = pre > 0.0 ? pre : 0.0;
      if (act > best) {
        best = act;
        c.argmax[f] = t;
        c.pre_at_max[f] = pre;
      }
    }
    if (has_padding) {
      // Every position from true_length on sees an all-zero window.
      const double pre = m.filter_bias[f];
      const double act = pre > 0.0 ? pre : 0.0;
      if (act > best) {
        best = act;
        c.argmax[f] = c.tokens.size();
        c.pre_at_max[f] = pre;
      }
    }
    c.pooled[f] = best;
  }

  out.prediction.assign(cfg.output_dim, 0.0);
  for (std::size_t k = 0; k < cfg.output_dim; ++k) {
    out.prediction[k] =
        m.dense_b[k] + dot(m.dense_w.data() + k * cfg.num_filters, c.pooled.data(), cfg.num_filters);
  }
  return out;
}

std::vector<double> predict_factors(const CnnModel& model, const TokenizedDoc& doc) {
  return forward(model, doc).prediction;
}

std::vector<double> conv_map(const CnnModel& m, const TokenizedDoc& doc) {
  check_doc(m, doc);
  const auto n = doc.token_ids.size();
  const auto filters = m.config.num_filters;
  std::vector<double> out(n * filters);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t f = 0; f < filters; ++f) {
      out[t * filters + f] = std::max(0.0, pre_activation(m, doc.token_ids, t, f));
    }
  }
  return out;
}

double loss(std::span<const double> prediction, std::span<const double> target) {
  if (prediction.size() != target.size()) {
    throw ParameterError("prediction and target lengths differ");
  }
  if (prediction.empty()) throw ParameterError("loss of empty vectors");
  double s = 0.0;
  for (std::size_t k = 0; k < prediction.size(); ++k) {
    const double d = prediction[k] - target[k];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(prediction.size()));
}

// ---------------------------------------------------------------------------
// Backward

Gradients::Gradients(const CnnModel& m)
    : filters(m.filters.size(), 0.0),
      filter_bias(m.filter_bias.size(), 0.0),
      dense_w(m.dense_w.size(), 0.0),
      dense_b(m.dense_b.size(), 0.0) {}

void accumulate_gradients(const CnnModel& m, const ForwardCache& c,
                          std::span<const double> prediction, std::span<const double> target,
                          Gradients& acc) {
  if (c.model != &m || c.generation != m.generation) {
    throw ContractError("forward cache is stale: parameters changed since forward()");
  }
  const auto& cfg = m.config;
  if (prediction.size() != cfg.output_dim || target.size() != cfg.output_dim) {
    throw ParameterError("prediction/target length must equal output_dim");
  }
  const auto filters = cfg.num_filters;
  const auto dim = cfg.embed_dim;

  // d mean((p - t)^2) / dp_k
  std::vector<double> d_out(cfg.output_dim);
  for (std::size_t k = 0; k < cfg.output_dim; ++k) {
    d_out[k] = 2.0 * (prediction[k] - target[k]) / static_cast<double>(cfg.output_dim);
  }
  std::vector<double> d_pooled(filters, 0.0);
  for (std::size_t k = 0; k < cfg.output_dim; ++k) {
    acc.dense_b[k] += d_out[k];
    for (std::size_t f = 0; f < filters; ++f) {
      acc.dense_w[k * filters + f] += d_out[k] * c.pooled[f];
      d_pooled[f] += d_out[k] * m.dense_w[k * filters + f];
    }
  }

  for (std::size_t f = 0; f < filters; ++f) {
    if (!(c.pre_at_max[f] > 0.0)) continue;  // ReLU gradient is 0 at and below 0
    const double g = d_pooled[f];
    acc.filter_bias[f] += g;
    const double* w = m.filters.data() + f * cfg.window * dim;
    double* dw = acc.filters.data() + f * cfg.window * dim;
    const auto t = c.argmax[f];
    for (std::size_t o = 0; o < cfg.window && t + o < c.tokens.size(); ++o) {
      const auto id = c.tokens[t + o];
      if (id == EmbeddingTable::kPadRow) continue;
      const auto x = m.embedding.row(id);
      auto& de = acc.embedding[id];
      if (de.empty()) de.assign(dim, 0.0);
      for (std::size_t d = 0; d < dim; ++d) {
        dw[o * dim + d] += g * x[d];
        de[d] += g * w[o * dim + d];
      }
    }
  }
}

Gradients backward(const CnnModel& model, const ForwardCache& cache,
                   std::span<const double> prediction, std::span<const double> target) {
  Gradients g(model);
  accumulate_gradients(model, cache, prediction, target, g);
  return g;
}

void apply_gradients(CnnModel& m, const Gradients& g, double scale) {
  auto step = [scale](std::vector<double>& p, const std::vector<double>& d) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= scale * d[i];
  };
  step(m.filters, g.filters);
  step(m.filter_bias, g.filter_bias);
  step(m.dense_w, g.dense_w);
  step(m.dense_b, g.dense_b);
  for (const auto& [id, d] : g.embedding) {
    if (id == EmbeddingTable::kPadRow) continue;
    auto row = m.embedding.mutable_row(id);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] -= scale * d[i];
  }
  ++m.generation;
}

// ---------------------------------------------------------------------------
// Training

double dataset_rmse(const CnnModel& model, std::span<const TokenizedDoc> docs,
                    const TargetMap& targets) {
  if (docs.empty()) throw ParameterError("RMSE over an empty document set");
  double sse = 0.0;
  for (const auto& doc : docs) {
    const auto it = targets.find(doc.business_id);
    if (it == targets.end()) throw NotFoundError("no target for '" + doc.business_id + "'");
    const auto pred = predict_factors(model, doc);
    const auto& target = it->second;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double d = pred[k] - target[k];
      sse += d * d;
    }
  }
  return std::sqrt(sse / static_cast<double>(docs.size() * model.config.output_dim));
}

namespace {

bool finite_params(const CnnModel& m) {
  auto ok = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return ok(m.filters) && ok(m.filter_bias) && ok(m.dense_w) && ok(m.dense_b);
}

}  // namespace

CnnTrainResult train_cnn(std::span<const TokenizedDoc> docs, const TargetMap& targets,
                         const CnnConfig& config, EmbeddingTable embedding) {
  config.validate();
  if (docs.size() < 2) throw ParameterError("CNN training needs at least 2 documents");
  std::string missing;
  for (const auto& doc : docs) {
    auto it = targets.find(doc.business_id);
    if (it == targets.end()) {
      missing += " " + doc.business_id;
    } else if (it->second.size() != config.output_dim) {
      throw ParameterError("target for '" + doc.business_id + "' has wrong length");
    }
  }
  if (!missing.empty()) throw NotFoundError("no target factors for business(es):" + missing);

  Rng rng(config.seed);
  CnnModel model = init_cnn(config, std::move(embedding), rng);

  std::vector<const TokenizedDoc*> order(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) order[i] = &docs[i];
  rng.shuffle(std::span(order));
  auto n_val = static_cast<std::size_t>(
      std::floor(config.validation_frac * static_cast<double>(docs.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, docs.size() - 1);
  std::vector<TokenizedDoc> train_docs, val_docs;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < order.size() - n_val ? train_docs : val_docs).push_back(*order[i]);
  }

  CnnTrainResult result{model, {}, 0};
  auto record = [&](int epoch) {
    EpochRecord r{epoch, dataset_rmse(model, train_docs, targets),
                  dataset_rmse(model, val_docs, targets)};
    if (!std::isfinite(r.train_rmse) || !std::isfinite(r.val_rmse) || !finite_params(model)) {
      throw DivergenceError("CNN training diverged in epoch " + std::to_string(epoch), epoch);
    }
    result.history.push_back(r);
    if (epoch == 0 || r.val_rmse < result.history[result.best_epoch].val_rmse) {
      result.best_epoch = epoch;
      result.best_model = model;
    }
  };
  record(0);

  std::vector<std::size_t> batch_order(train_docs.size());
  std::iota(batch_order.begin(), batch_order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span(batch_order));
    for (std::size_t start = 0; start < batch_order.size(); start += config.batch_size) {
      const auto end = std::min(batch_order.size(), start + config.batch_size);
      Gradients grads(model);
      for (std::size_t b = start; b < end; ++b) {
        const auto& doc = train_docs[batch_order[b]];
        const auto fw = forward(model, doc);
        accumulate_gradients(model, fw.cache, fw.prediction, targets.find(doc.business_id)->second,
                             grads);
      }
      apply_gradients(model, grads, config.learning_rate / static_cast<double>(end - start));
    }
    record(epoch);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr std::uint32_t kCnnVersion = 1;
}

void save_cnn(const CnnModel& m, const std::filesystem::path& path) {
  binio::Writer w;
  w.magic("CRCN");
  w.u32(kCnnVersion);
  const auto& c = m.config;
  w.u64(c.embed_dim);
  w.u64(c.num_filters);
  w.u64(c.window);
  w.u64(c.output_dim);
  w.f64(c.learning_rate);
  w.u64(c.batch_size);
  w.u64(static_cast<std::uint64_t>(c.max_epochs));
  w.f64(c.validation_frac);
  w.u64(c.seed);
  textprep::encode_table(w, m.embedding);
  w.f64s(m.filters);
  w.f64s(m.filter_bias);
  w.f64s(m.dense_w);
  w.f64s(m.dense_b);
  w.save(path);
}

CnnModel load_cnn(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic("CRCN");
  if (const auto v = r.u32(); v != kCnnVersion) {
    throw ParseError("unsupported CNN checkpoint version " + std::to_string(v));
  }
  CnnConfig c;
  c.embed_dim = r.u64();
  c.num_filters = r.u64();
  c.window = r.u64();
  c.output_dim = r.u64();
  c.learning_rate = r.f64();
  c.batch_size = r.u64();
  c.max_epochs = static_cast<int>(r.u64());
  c.validation_frac = r.f64();
  c.seed = r.u64();
  c.validate();
  CnnModel m{c, textprep::decode_table(r), r.f64s(), r.f64s(), r.f64s(), r.f64s(), 0};
  if (!r.at_end()) throw ParseError("trailing bytes in CNN checkpoint");
  if (m.embedding.dim() != c.embed_dim || m.filters.size() != c.num_filters * c.window * c.embed_dim ||
      m.filter_bias.size() != c.num_filters || m.dense_w.size() != c.output_dim * c.num_filters ||
      m.dense_b.size() != c.output_dim) {
    throw ParseError("CNN checkpoint tensor shapes do not match its config");
  }
  return m;
}

void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write history: " + path.string());
  out << "epoch,train_rmse,val_rmse\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << format_real(h.train_rmse) << ',' << format_real(h.val_rmse) << '\n';
  }
}

}  // namespace coldrec::convnet
