#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "coldrec/convnet.hpp"
#include "coldrec/error.hpp"
#include "support/temp_dir.hpp"

using namespace coldrec;
using namespace coldrec::convnet;
using textprep::EmbeddingTable;
using textprep::Provenance;
using textprep::TokenizedDoc;

namespace {

EmbeddingTable random_table(std::size_t rows, std::size_t dim, Rng& rng) {
  EmbeddingTable t(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.uniform(-1, 1);
    t.add_row("w" + std::to_string(r), v, Provenance::pretrained);
  }
  return t;
}

TokenizedDoc doc_of(std::string id, std::vector<std::uint32_t> tokens, std::size_t padded = 0) {
  TokenizedDoc d{std::move(id), std::move(tokens), 0};
  d.true_length = d.token_ids.size();
  d.token_ids.resize(std::max(padded, d.true_length), EmbeddingTable::kPadRow);
  return d;
}

CnnConfig tiny_config(std::size_t dim, std::size_t filters, std::size_t window, std::size_t out) {
  CnnConfig c;
  c.embed_dim = dim;
  c.num_filters = filters;
  c.window = window;
  c.output_dim = out;
  return c;
}

double mse(const CnnModel& m, const TokenizedDoc& d, const std::vector<double>& target) {
  const auto p = predict_factors(m, d);
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
  return s / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("hand-computed forward pass") {
  CnnModel m;
  m.config = tiny_config(2, 1, 2, 2);
  m.embedding = EmbeddingTable(2);
  m.embedding.add_row("a", std::vector<double>{1, 2}, Provenance::pretrained);
  m.embedding.add_row("b", std::vector<double>{0.5, -1}, Provenance::pretrained);
  m.embedding.add_row("c", std::vector<double>{-1, 2}, Provenance::pretrained);
  m.filters = {0.1, 0.2, 0.3, 0.4};
  m.filter_bias = {0.05};
  m.dense_w = {2, -1};
  m.dense_b = {0.1, 0.2};
  // Pre-activations 0.3, 0.4, 0.35; max 0.4.
  const auto fw = forward(m, doc_of("x", {1, 2, 3}));
  CHECK(std::abs(fw.cache.pooled[0] - 0.4) <= 1e-12);
  CHECK(fw.cache.argmax[0] == 1);
  CHECK(std::abs(fw.prediction[0] - 0.9) <= 1e-12);
  CHECK(std::abs(fw.prediction[1] + 0.2) <= 1e-12);

  const auto map = conv_map(m, doc_of("x", {1, 2, 3}));
  REQUIRE(map.size() == 3);
  CHECK(std::abs(map[0] - 0.3) <= 1e-12);
  CHECK(std::abs(map[2] - 0.35) <= 1e-12);
}

TEST_CASE("bias-only path") {
  Rng rng(1);
  auto cfg = tiny_config(4, 3, 2, 3);
  auto m = init_cnn(cfg, random_table(5, 4, rng), rng);
  std::fill(m.filters.begin(), m.filters.end(), 0.0);
  std::fill(m.dense_w.begin(), m.dense_w.end(), 0.0);
  m.dense_b = {1.5, -2, 0.25};
  for (const auto& d : {doc_of("a", {1}), doc_of("b", {2, 3, 4, 5}, 9)}) {
    CHECK(predict_factors(m, d) == m.dense_b);
  }
}

TEST_CASE("shape contract at default sizes") {
  Rng rng(2);
  CnnConfig cfg;  // 300-d embeddings, 50 filters, output 20
  auto table = random_table(40, 300, rng);
  const auto m = init_cnn(cfg, table, rng);
  for (std::size_t n : {4u, 17u, 256u}) {
    std::vector<std::uint32_t> tokens(n);
    for (auto& t : tokens) t = 1 + static_cast<std::uint32_t>(rng.below(40));
    // Real tokens on part of the doc so the pad region is exercised too.
    const auto d = doc_of("d", std::vector<std::uint32_t>(tokens.begin(), tokens.begin() + (n * 3) / 4), n);
    REQUIRE(d.token_ids.size() == n);
    const auto map = conv_map(m, d);
    CHECK(map.size() == n * 50);
    const auto fw = forward(m, d);
    CHECK(fw.cache.pooled.size() == 50);
    CHECK(fw.prediction.size() == 20);
    for (std::size_t f = 0; f < 50; ++f) {
      double best = -1;
      for (std::size_t t = 0; t < n; ++t) best = std::max(best, map[t * 50 + f]);
      CHECK(fw.cache.pooled[f] == doctest::Approx(best).epsilon(1e-12));
    }
  }
}

TEST_CASE("loss examples") {
  const std::vector<double> a{1, 1}, z{0, 0};
  CHECK(loss(a, a) == 0.0);
  CHECK(loss(a, z) == doctest::Approx(1.0));
  CHECK(loss(std::vector<double>{3, 0, 0, 0}, std::vector<double>{0, 0, 0, 0}) == doctest::Approx(1.5));
  CHECK_THROWS_AS(loss(a, std::vector<double>{0}), ParameterError);
}

TEST_CASE("gradients match central finite differences") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(seed + 30);
    auto cfg = tiny_config(3, 2, 2, 2);
    auto m = init_cnn(cfg, random_table(6, 3, rng), rng);
    for (auto& b : m.filter_bias) b = rng.uniform(-0.1, 0.3);
    for (auto& b : m.dense_b) b = rng.uniform(-0.5, 0.5);
    const auto d = doc_of("d", {1, 4, 2, 6, 4}, 7);
    const std::vector<double> target{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto fw = forward(m, d);
    const auto g = backward(m, fw.cache, fw.prediction, target);
    CHECK_FALSE(g.embedding.contains(EmbeddingTable::kPadRow));

    const double eps = 1e-6;
    auto check = [&](std::vector<double>& param, const std::vector<double>& grad, const char* what) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param[i];
        param[i] = saved + eps;
        const double up = mse(m, d, target);
        param[i] = saved - eps;
        const double down = mse(m, d, target);
        param[i] = saved;
        const double numeric = (up - down) / (2 * eps);
        const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-7});
        INFO(what << "[" << i << "] analytic " << grad[i] << " numeric " << numeric);
        CHECK(std::abs(numeric - grad[i]) / scale <= 1e-4);
      }
    };
    check(m.filters, g.filters, "filters");
    check(m.filter_bias, g.filter_bias, "filter_bias");
    check(m.dense_w, g.dense_w, "dense_w");
    check(m.dense_b, g.dense_b, "dense_b");

    for (std::uint32_t row = 1; row < m.embedding.rows(); ++row) {
      auto values = m.embedding.mutable_row(row);
      std::vector<double> analytic(3, 0.0);
      if (auto it = g.embedding.find(row); it != g.embedding.end()) analytic = it->second;
      for (std::size_t c = 0; c < 3; ++c) {
        const double saved = values[c];
        values[c] = saved + eps;
        const double up = mse(m, d, target);
        values[c] = saved - eps;
        const double down = mse(m, d, target);
        values[c] = saved;
        const double numeric = (up - down) / (2 * eps);
        const double scale = std::max({std::abs(numeric), std::abs(analytic[c]), 1e-7});
        INFO("embedding row " << row << " component " << c);
        CHECK(std::abs(numeric - analytic[c]) / scale <= 1e-4);
      }
    }
  }
}

TEST_CASE("backward edge cases") {
  Rng rng(4);
  auto m = init_cnn(tiny_config(3, 2, 2, 2), random_table(4, 3, rng), rng);
  const auto d = doc_of("d", {1, 2, 3}, 5);
  const auto fw = forward(m, d);

  SUBCASE("zero error gives zero gradients") {
    const auto g = backward(m, fw.cache, fw.prediction, fw.prediction);
    for (const auto* v : {&g.filters, &g.filter_bias, &g.dense_w, &g.dense_b}) {
      for (double x : *v) CHECK(x == 0.0);
    }
    for (const auto& [row, v] : g.embedding) {
      for (double x : v) CHECK(x == 0.0);
    }
  }
  SUBCASE("stale cache") {
    const std::vector<double> target{0, 0};
    auto g = backward(m, fw.cache, fw.prediction, target);
    apply_gradients(m, g, 0.1);
    CHECK_THROWS_AS(backward(m, fw.cache, fw.prediction, target), ContractError);
  }
  SUBCASE("pad row never moves") {
    Gradients g(m);
    g.embedding[1] = {1, 1, 1};
    apply_gradients(m, g, 1.0);
    for (double x : m.embedding.row(EmbeddingTable::kPadRow)) CHECK(x == 0.0);
  }
  SUBCASE("empty doc") {
    TokenizedDoc empty{"e", {0, 0}, 0};
    CHECK_THROWS_AS(forward(m, empty), ParameterError);
  }
}

TEST_CASE("window 1 pooling is permutation invariant") {
  Rng rng(6);
  auto m = init_cnn(tiny_config(5, 8, 1, 3), random_table(20, 5, rng), rng);
  for (auto& b : m.filter_bias) b = rng.uniform(-0.2, 0.2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint32_t> tokens(1 + rng.below(15));
    for (auto& t : tokens) t = 1 + static_cast<std::uint32_t>(rng.below(20));
    const auto a = forward(m, doc_of("a", tokens, 16));
    rng.shuffle(std::span(tokens));
    const auto b = forward(m, doc_of("b", tokens, 16));
    CHECK(a.cache.pooled == b.cache.pooled);
  }
}

TEST_CASE("extra padding does not change the output with zero filter bias") {
  Rng rng(7);
  auto m = init_cnn(tiny_config(4, 6, 3, 2), random_table(10, 4, rng), rng);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint32_t> tokens(1 + rng.below(8));
    for (auto& t : tokens) t = 1 + static_cast<std::uint32_t>(rng.below(10));
    const auto base = predict_factors(m, doc_of("a", tokens));
    const auto padded = predict_factors(m, doc_of("a", tokens, tokens.size() + 1 + rng.below(20)));
    CHECK(base == padded);
  }
}

namespace {

// Docs over a random vocabulary whose target is a fixed linear map of the
// mean token embedding. With `fixed_len` set every doc has that many tokens,
// so a window of the same width sees the whole doc at position 0.
struct LinearTask {
  EmbeddingTable table{6};
  std::vector<TokenizedDoc> docs;
  TargetMap targets;
};

LinearTask linear_task(std::size_t n_docs, std::uint64_t seed, std::size_t fixed_len = 0) {
  Rng rng(seed);
  LinearTask task;
  task.table = random_table(30, 6, rng);
  std::vector<double> w(3 * 6);
  for (auto& x : w) x = rng.uniform(-1, 1);
  for (std::size_t n = 0; n < n_docs; ++n) {
    std::vector<std::uint32_t> tokens(fixed_len ? fixed_len : 3 + rng.below(6));
    for (auto& t : tokens) t = 1 + static_cast<std::uint32_t>(rng.below(30));
    std::vector<double> mean(6, 0.0);
    for (auto t : tokens) {
      for (std::size_t c = 0; c < 6; ++c) mean[c] += task.table.row(t)[c] / static_cast<double>(tokens.size());
    }
    std::vector<double> target(3, 0.0);
    for (std::size_t o = 0; o < 3; ++o) {
      for (std::size_t c = 0; c < 6; ++c) target[o] += w[o * 6 + c] * mean[c];
    }
    const auto id = "b" + std::to_string(n);
    task.docs.push_back(doc_of(id, tokens, fixed_len ? fixed_len : 8));
    task.targets[id] = target;
  }
  return task;
}

}  // namespace

TEST_CASE("training") {
  SUBCASE("identical docs fit a constant") {
    Rng rng(8);
    auto table = random_table(5, 4, rng);
    std::vector<TokenizedDoc> docs;
    TargetMap targets;
    for (int n = 0; n < 10; ++n) {
      const auto id = "b" + std::to_string(n);
      docs.push_back(doc_of(id, {1, 2, 3}));
      targets[id] = {0.3, -0.2};
    }
    auto cfg = tiny_config(4, 4, 2, 2);
    cfg.learning_rate = 0.05;
    cfg.batch_size = 4;
    const auto res = train_cnn(docs, targets, cfg, table);
    CHECK(res.history.size() == 51);
    CHECK(res.history[res.best_epoch].val_rmse < 1e-3);
  }

  SUBCASE("learnable linear task") {
    auto task = linear_task(600, 21, 4);
    auto cfg = tiny_config(6, 24, 4, 3);
    cfg.learning_rate = 0.2;
    cfg.batch_size = 8;
    cfg.max_epochs = 150;
    cfg.seed = 5;
    const auto res = train_cnn(task.docs, task.targets, cfg, task.table);
    const double initial = res.history.front().val_rmse;
    const double best = res.history[res.best_epoch].val_rmse;
    MESSAGE("validation RMSE " << initial << " -> " << best << " at epoch " << res.best_epoch);
    CHECK(best < 0.1 * initial);
    CHECK(dataset_rmse(res.best_model, task.docs, task.targets) < initial);
    for (double x : res.best_model.embedding.row(EmbeddingTable::kPadRow)) CHECK(x == 0.0);
  }

  SUBCASE("determinism") {
    auto task = linear_task(40, 3);
    auto cfg = tiny_config(6, 4, 2, 3);
    cfg.max_epochs = 4;
    cfg.batch_size = 5;
    cfg.learning_rate = 0.01;
    const auto a = train_cnn(task.docs, task.targets, cfg, task.table);
    const auto b = train_cnn(task.docs, task.targets, cfg, task.table);
    CHECK(a.history == b.history);
    CHECK(a.best_model == b.best_model);
    CHECK(a.best_epoch == b.best_epoch);
  }

  SUBCASE("errors") {
    auto task = linear_task(5, 3);
    auto cfg = tiny_config(6, 4, 2, 3);
    auto targets = task.targets;
    targets.erase("b2");
    CHECK_THROWS_AS(train_cnn(task.docs, targets, cfg, task.table), NotFoundError);
    CHECK_THROWS_AS(train_cnn(std::span(task.docs).first(1), task.targets, cfg, task.table), ParameterError);
    cfg.window = 0;
    CHECK_THROWS_AS(train_cnn(task.docs, task.targets, cfg, task.table), ParameterError);
    cfg = tiny_config(6, 4, 2, 3);
    cfg.validation_frac = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
  }

  SUBCASE("divergence") {
    auto task = linear_task(20, 3);
    for (auto& [id, t] : task.targets) t = {1e6, -1e6, 1e6};
    auto cfg = tiny_config(6, 4, 2, 3);
    cfg.learning_rate = 1e3;
    cfg.max_epochs = 50;
    CHECK_THROWS_AS(train_cnn(task.docs, task.targets, cfg, task.table), DivergenceError);
  }
}

TEST_CASE("checkpoint and history round-trip") {
  auto task = linear_task(12, 9);
  auto cfg = tiny_config(6, 4, 2, 3);
  cfg.max_epochs = 2;
  const auto res = train_cnn(task.docs, task.targets, cfg, task.table);
  testing::TempDir dir;
  save_cnn(res.best_model, dir / "cnn.bin");
  auto back = load_cnn(dir / "cnn.bin");
  back.generation = res.best_model.generation;
  CHECK(back == res.best_model);
  write_history_csv(res.history, dir / "h.csv");
  const auto csv = testing::read_text(dir / "h.csv");
  CHECK(csv.rfind("epoch,train_rmse,val_rmse\n0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
