#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "charm/rng.hpp"
#include "charm/tensor.hpp"

namespace charm::testing {

struct OracleHit {
  std::string id;
  double score = 0;
  int field = -1;
};

// Exhaustive reference for two-stage search, written without the library.
struct OracleCorpus {
  std::vector<std::string> ids;
  std::vector<std::vector<float>> agg;                  // M rows
  std::vector<std::vector<std::vector<float>>> fields;  // F x M rows

  static double dot(const std::vector<float>& q, const std::vector<float>& v) {
    double s = 0;
    for (std::size_t c = 0; c < q.size(); ++c) s += static_cast<double>(q[c]) * static_cast<double>(v[c]);
    return s;
  }

  static void order(std::vector<OracleHit>& hits) {
    std::sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& b) {
      return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
  }

  OracleHit best_field(const std::vector<float>& q, std::size_t m) const {
    OracleHit h{ids[m], dot(q, fields[0][m]), 0};
    for (std::size_t f = 1; f < fields.size(); ++f) {
      const double s = dot(q, fields[f][m]);
      if (s > h.score) h = {ids[m], s, static_cast<int>(f)};
    }
    return h;
  }

  std::vector<OracleHit> two_stage(const std::vector<float>& q, std::size_t k_short, std::size_t k_final) const {
    std::vector<OracleHit> s1;
    for (std::size_t m = 0; m < ids.size(); ++m) s1.push_back({ids[m], dot(q, agg[m]), -1});
    order(s1);
    s1.resize(std::min(k_short, s1.size()));
    std::vector<OracleHit> s2;
    for (const auto& h : s1) {
      const auto m = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), h.id) - ids.begin());
      s2.push_back(best_field(q, m));
    }
    order(s2);
    s2.resize(std::min(k_final, s2.size()));
    return s2;
  }

  std::vector<OracleHit> full(const std::vector<float>& q, std::size_t k) const {
    std::vector<OracleHit> all;
    for (std::size_t m = 0; m < ids.size(); ++m) all.push_back(best_field(q, m));
    order(all);
    all.resize(std::min(k, all.size()));
    return all;
  }

  Tensor<float> matrix(const std::vector<std::vector<float>>& rows) const {
    Tensor<float> t(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows[r].size(); ++c) t(r, c) = rows[r][c];
    }
    return t;
  }
};

// Random corpus with shuffled ids and some duplicated rows so that exact score
// ties occur. Values are small integers over 4 so ties also arise from sums.
inline OracleCorpus random_oracle_corpus(Rng& rng, std::size_t m, std::size_t n_fields, std::size_t d) {
  OracleCorpus c;
  for (std::size_t i = 0; i < m; ++i) c.ids.push_back("p" + std::to_string(100000 + rng.uniform_index(900000)) + "_" + std::to_string(i));
  rng.shuffle(c.ids);
  auto vec = [&] {
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(static_cast<int>(rng.uniform_index(9)) - 4) / 4.0f;
    return v;
  };
  c.fields.assign(n_fields, {});
  for (std::size_t i = 0; i < m; ++i) {
    const bool dup = i > 0 && rng.uniform() < 0.2;
    const std::size_t src = dup ? static_cast<std::size_t>(rng.uniform_index(i)) : i;
    c.agg.push_back(dup ? c.agg[src] : vec());
    for (std::size_t f = 0; f < n_fields; ++f) c.fields[f].push_back(dup ? c.fields[f][src] : vec());
  }
  return c;
}

}  // namespace charm::testing
