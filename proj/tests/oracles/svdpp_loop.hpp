#pragma once

// Straight-line SVD++ reference: nested vectors, explicit loops, no shared
// helpers with the library beyond the random stream.

#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "coldrec/corpus.hpp"
#include "coldrec/rng.hpp"

namespace coldrec::oracle {

struct LoopSvdpp {
  int k;
  double lr, reg, scale;
  bool halve;
  double mu = 0;
  std::vector<std::tuple<int, int, double>> data;  // user, item, rating
  std::vector<std::vector<int>> rated;
  std::vector<double> bu, bi;
  std::vector<std::vector<double>> p, q, y;

  LoopSvdpp(const corpus::ReviewSet& set, int k_, double lr_, double reg_, double scale_, bool halve_)
      : k(k_), lr(lr_), reg(reg_), scale(scale_), halve(halve_) {
    std::map<std::string, int> users, items;
    std::map<std::pair<int, int>, std::pair<int, corpus::Date>> where;
    for (const auto& r : set.reviews()) {
      int u = users.count(r.user_id) ? users[r.user_id] : (users[r.user_id] = int(users.size()));
      int i = items.count(r.business_id) ? items[r.business_id] : (items[r.business_id] = int(items.size()));
      auto key = std::make_pair(u, i);
      if (!where.count(key)) {
        where[key] = {int(data.size()), r.date};
        data.emplace_back(u, i, r.stars);
      } else if (r.date >= where[key].second) {
        std::get<2>(data[where[key].first]) = r.stars;
        where[key].second = r.date;
      }
    }
    rated.resize(users.size());
    for (auto& [u, i, v] : data) {
      rated[u].push_back(i);
      mu += v;
    }
    mu /= double(data.size());
    for (auto& row : rated) std::sort(row.begin(), row.end());
    bu.assign(users.size(), 0);
    bi.assign(items.size(), 0);
    p.assign(users.size(), std::vector<double>(k));
    q.assign(items.size(), std::vector<double>(k));
    y.assign(items.size(), std::vector<double>(k));
  }

  void init(Rng& rng) {
    for (auto* table : {&p, &q, &y})
      for (auto& row : *table)
        for (auto& v : row) v = rng.uniform(-scale, scale);
  }

  std::vector<double> z(int u) const {
    std::vector<double> out = p[u];
    if (rated[u].empty()) return out;
    std::vector<double> sum(k, 0.0);
    for (int j : rated[u])
      for (int f = 0; f < k; ++f) sum[f] += y[j][f];
    for (int f = 0; f < k; ++f) out[f] += sum[f] / std::sqrt(double(rated[u].size()));
    return out;
  }

  double error(int u, int i, double v) const {
    auto zu = z(u);
    double pred = mu + bu[u] + bi[i];
    for (int f = 0; f < k; ++f) pred += q[i][f] * zu[f];
    return v - pred;
  }

  double loss() const {
    double total = 0;
    for (auto& [u, i, v] : data) {
      double e = error(u, i, v);
      double pen = bu[u] * bu[u] + bi[i] * bi[i];
      for (int f = 0; f < k; ++f) pen += p[u][f] * p[u][f] + q[i][f] * q[i][f];
      for (int j : rated[u])
        for (int f = 0; f < k; ++f) pen += y[j][f] * y[j][f];
      total += 0.5 * e * e + 0.5 * reg * pen;
    }
    return total;
  }

  void step(int u, int i, double v) {
    double e = error(u, i, v);
    auto zu = z(u);
    double n = rated[u].empty() ? 0 : 1 / std::sqrt(double(rated[u].size()));
    auto old_q = q[i];
    auto old_p = p[u];
    bu[u] += lr * (e - reg * bu[u]);
    bi[i] += lr * (e - reg * bi[i]);
    for (int f = 0; f < k; ++f) {
      p[u][f] = old_p[f] + lr * (e * old_q[f] - reg * old_p[f]);
      q[i][f] = old_q[f] + lr * (e * zu[f] - reg * old_q[f]);
    }
    for (int j : rated[u])
      for (int f = 0; f < k; ++f) y[j][f] = y[j][f] + lr * (e * n * old_q[f] - reg * y[j][f]);
  }

  // Objective after each epoch (rejected epochs included); entry 0 is the
  // initial objective.
  std::vector<double> train(std::uint64_t seed, int epochs) {
    Rng rng(seed);
    init(rng);
    std::vector<std::uint32_t> order(data.size());
    std::iota(order.begin(), order.end(), 0u);
    std::vector<double> losses{loss()};
    double accepted = losses[0];
    for (int e = 0; e < epochs; ++e) {
      auto saved = std::make_tuple(bu, bi, p, q, y);
      rng.shuffle(std::span(order));
      for (auto idx : order) {
        auto& [u, i, v] = data[idx];
        step(u, i, v);
      }
      double l = loss();
      losses.push_back(l);
      if (halve && l > accepted) {
        std::tie(bu, bi, p, q, y) = saved;
        lr /= 2;
      } else {
        accepted = l;
      }
    }
    return losses;
  }
};

}  // namespace coldrec::oracle
