#include "charm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "charm/error.hpp"
#include "charm/rng.hpp"

namespace charm {

DiversityStats diversity_stats(const Tensor<float>& rows, std::size_t max_pairs, std::uint64_t seed) {
  const std::size_t m = rows.rows(), d = rows.cols();
  if (m == 0 || d == 0) throw DimensionError("diversity: empty matrix");
  DiversityStats s;

  auto accumulate = [&](std::size_t i, std::size_t j) {
    double sq = 0, dp = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const double a = rows(i, c), b = rows(j, c);
      sq += (a - b) * (a - b);
      dp += a * b;
    }
    s.mean_euclidean += std::sqrt(sq);
    s.mean_dot += dp;
    ++s.n_pairs;
  };
  const std::size_t all_pairs = m * (m - 1) / 2;
  if (max_pairs == 0 || all_pairs <= max_pairs) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) accumulate(i, j);
    }
  } else {
    Rng rng(seed);
    for (std::size_t p = 0; p < max_pairs; ++p) {
      const auto i = static_cast<std::size_t>(rng.uniform_index(m));
      auto j = static_cast<std::size_t>(rng.uniform_index(m - 1));
      if (j >= i) ++j;
      accumulate(i, j);
    }
  }
  if (s.n_pairs > 0) {
    s.mean_euclidean /= static_cast<double>(s.n_pairs);
    s.mean_dot /= static_cast<double>(s.n_pairs);
  }

  Eigen::MatrixXd x(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < d; ++c) x(i, c) = rows(i, c);
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const double denom = static_cast<double>(std::max<std::size_t>(m - 1, 1));
  Eigen::MatrixXd cov = (x.transpose() * x) / denom;
  const double mean_diag = cov.diagonal().mean();
  s.epsilon = mean_diag > 0 ? 1e-6 * mean_diag : 1e-6;
  cov.diagonal().array() += s.epsilon;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw Error("diversity: covariance is not positive definite");
  s.log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return s;
}

DiversityReport diversity_report(const TwoTierIndex& index, std::size_t max_pairs,
                                 std::uint64_t seed) {
  DiversityReport r;
  r.aggregated = diversity_stats(index.aggregated(), max_pairs, seed);
  for (const auto& f : index.fields()) r.fields.push_back(diversity_stats(f, max_pairs, seed));
  return r;
}

std::vector<std::size_t> match_field_histogram(const std::vector<RankedResult>& results,
                                               std::size_t n_fields, std::size_t k) {
  std::vector<std::size_t> counts(n_fields, 0);
  for (const auto& r : results) {
    for (std::size_t i = 0; i < std::min(k, r.size()); ++i) {
      const int f = r[i].best_field;
      if (f < 0 || static_cast<std::size_t>(f) >= n_fields) {
        throw DimensionError("match_field_histogram: hit without a field annotation");
      }
      ++counts[static_cast<std::size_t>(f)];
    }
  }
  return counts;
}

std::map<std::size_t, std::size_t> fields_per_query_histogram(
    const std::vector<RankedResult>& results, std::size_t k) {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& r : results) {
    std::set<int> fields;
    for (std::size_t i = 0; i < std::min(k, r.size()); ++i) fields.insert(r[i].best_field);
    ++hist[fields.size()];
  }
  return hist;
}

namespace {

std::size_t utf8_length(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

std::vector<double> query_length_by_field(const std::vector<RankedResult>& results,
                                          const std::vector<QueryRecord>& queries,
                                          std::size_t n_fields) {
  if (results.size() != queries.size()) {
    throw DimensionError("query_length_by_field: one result list per query required");
  }
  std::vector<double> total(n_fields, 0);
  std::vector<std::size_t> count(n_fields, 0);
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].empty()) continue;
    const int f = results[i].front().best_field;
    if (f < 0 || static_cast<std::size_t>(f) >= n_fields) {
      throw DimensionError("query_length_by_field: hit without a field annotation");
    }
    total[static_cast<std::size_t>(f)] += static_cast<double>(utf8_length(queries[i].text));
    ++count[static_cast<std::size_t>(f)];
  }
  for (std::size_t f = 0; f < n_fields; ++f) {
    if (count[f] > 0) total[f] /= static_cast<double>(count[f]);
  }
  return total;
}

std::vector<double> match_entropy_curve(const std::vector<RankedResult>& results,
                                        const std::map<std::string, std::string>& product_types,
                                        const std::vector<std::size_t>& ks) {
  std::vector<double> curve;
  for (const auto k : ks) {
    double sum = 0;
    for (const auto& r : results) {
      std::map<std::string, std::size_t> counts;
      const std::size_t n = std::min(k, r.size());
      for (std::size_t i = 0; i < n; ++i) {
        const auto it = product_types.find(r[i].product_id);
        ++counts[it == product_types.end() ? std::string() : it->second];
      }
      double h = 0;
      for (const auto& [type, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(n);
        h -= p * std::log(p);
      }
      sum += h;
    }
    curve.push_back(results.empty() ? 0.0 : sum / static_cast<double>(results.size()));
  }
  return curve;
}

std::vector<std::vector<double>> preservation_curve(const TwoTierIndex& index,
                                                    const Tensor<float>& query_vectors,
                                                    const std::vector<std::size_t>& shortlist_sizes,
                                                    const std::vector<std::size_t>& ks) {
  std::vector<std::vector<double>> out(shortlist_sizes.size(), std::vector<double>(ks.size(), 0));
  const std::size_t nq = query_vectors.rows();
  if (nq == 0 || ks.empty() || shortlist_sizes.empty()) return out;
  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());
  const std::size_t max_s = *std::max_element(shortlist_sizes.begin(), shortlist_sizes.end());
  for (std::size_t q = 0; q < nq; ++q) {
    const auto v = query_vectors.row(q);
    const auto truth = index.full_field_search(v, max_k);
    const auto shortlist = index.stage1_shortlist(v, max_s);
    for (std::size_t si = 0; si < shortlist_sizes.size(); ++si) {
      std::unordered_set<std::string> kept;
      for (std::size_t i = 0; i < std::min(shortlist_sizes[si], shortlist.size()); ++i) {
        kept.insert(shortlist[i].product_id);
      }
      for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        const std::size_t k = std::min(ks[ki], truth.size());
        std::size_t hit = 0;
        for (std::size_t i = 0; i < k; ++i) hit += kept.count(truth[i].product_id);
        out[si][ki] += k == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(k);
      }
    }
  }
  for (auto& row : out) {
    for (auto& x : row) x /= static_cast<double>(nq);
  }
  return out;
}

std::map<std::string, double> aggregation_weight_by_type(const Tensor<float>& weights,
                                                         const std::vector<std::string>& types,
                                                         std::size_t field) {
  if (weights.rows() != types.size()) {
    throw DimensionError("aggregation_weight_by_type: one type per weight row required");
  }
  if (field >= weights.cols()) throw DimensionError("aggregation_weight_by_type: field out of range");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < types.size(); ++i) {
    auto& [sum, n] = acc[types[i]];
    sum += weights(i, field);
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [type, sn] : acc) out[type] = sn.first / static_cast<double>(sn.second);
  return out;
}

namespace {

std::string format_value(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_table(std::ostream& out, const std::string& title, const std::vector<ReportRow>& rows) {
  std::size_t w_metric = 6, w_key = 3;
  for (const auto& r : rows) {
    w_metric = std::max(w_metric, r.metric.size());
    w_key = std::max(w_key, r.key.size());
  }
  out << title << '\n';
  out << std::left << std::setw(static_cast<int>(w_metric)) << "metric" << "  "
      << std::setw(static_cast<int>(w_key)) << "key" << "  value\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(w_metric)) << r.metric << "  "
        << std::setw(static_cast<int>(w_key)) << r.key << "  " << std::fixed << std::setprecision(6)
        << r.value << '\n';
    out.unsetf(std::ios::fixed);
  }
}

void write_jsonl(std::ostream& out, const std::vector<ReportRow>& rows) {
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["metric"] = r.metric;
    j["key"] = r.key;
    j["value"] = r.value;
    out << j.dump() << '\n';
  }
}

void write_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "metric,key,value\n";
  for (const auto& r : rows) {
    out << csv_escape(r.metric) << ',' << csv_escape(r.key) << ',' << format_value(r.value) << '\n';
  }
}

std::vector<ReportRow> metric_rows(const MetricReport& report) {
  std::vector<ReportRow> rows;
  for (const auto& [mode, m] : report.modes) {
    const std::string key(to_string(mode));
    rows.push_back({"recall@10", key, m.recall10});
    rows.push_back({"recall@100", key, m.recall100});
    rows.push_back({"ndcg@50", key, m.ndcg50});
    rows.push_back({"precision@5", key, m.precision5});
    rows.push_back({"precision@10", key, m.precision10});
  }
  return rows;
}

std::vector<ReportRow> diversity_rows(const DiversityReport& report,
                                      const std::vector<std::string>& field_names) {
  std::vector<ReportRow> rows;
  auto add = [&](const std::string& key, const DiversityStats& s) {
    rows.push_back({"mean_euclidean", key, s.mean_euclidean});
    rows.push_back({"mean_dot", key, s.mean_dot});
    rows.push_back({"log_det", key, s.log_det});
    rows.push_back({"log_det_epsilon", key, s.epsilon});
  };
  add("aggregated", report.aggregated);
  for (std::size_t f = 0; f < report.fields.size(); ++f) {
    add(f < field_names.size() ? field_names[f] : "field" + std::to_string(f), report.fields[f]);
  }
  return rows;
}

}  // namespace charm
