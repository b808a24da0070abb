#include "charm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "charm/error.hpp"

namespace charm {

std::optional<double> recall_at_k(const RankedResult& r, const QueryRecord& q, std::size_t k) {
  const auto exact = q.exact_ids();
  if (exact.empty()) return std::nullopt;
  const std::unordered_set<std::string> want(exact.begin(), exact.end());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < std::min(k, r.size()); ++i) hit += want.count(r[i].product_id);
  return static_cast<double>(hit) / static_cast<double>(want.size());
}

std::optional<double> ndcg_at_k(const RankedResult& r, const QueryRecord& q, std::size_t k) {
  std::unordered_map<std::string, double> gains;
  std::vector<double> judged;
  for (const auto& j : q.judgments) {
    gains[j.product_id] = gain(j.label);
    judged.push_back(gain(j.label));
  }
  std::sort(judged.begin(), judged.end(), std::greater<>());
  double ideal = 0;
  for (std::size_t i = 0; i < std::min(k, judged.size()); ++i) {
    ideal += judged[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  if (ideal == 0) return std::nullopt;
  double dcg = 0;
  for (std::size_t i = 0; i < std::min(k, r.size()); ++i) {
    const auto it = gains.find(r[i].product_id);
    if (it != gains.end()) dcg += it->second / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / ideal;
}

double precision_at_k(const RankedResult& r, const QueryRecord& q, std::size_t k) {
  if (k == 0) throw ConfigError("precision_at_k: k must be positive");
  const auto exact = q.exact_ids();
  const std::unordered_set<std::string> want(exact.begin(), exact.end());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < std::min(k, r.size()); ++i) hit += want.count(r[i].product_id);
  return static_cast<double>(hit) / static_cast<double>(k);
}

std::string_view to_string(EvalMode m) noexcept {
  switch (m) {
    case EvalMode::Aggregated: return "aggregated";
    case EvalMode::BestField: return "best_field";
    case EvalMode::TwoStage: return "two_stage";
  }
  return "aggregated";
}

QueryMetrics query_metrics(const RankedResult& r, const QueryRecord& q) {
  QueryMetrics m;
  m.query_id = q.query_id;
  const auto r10 = recall_at_k(r, q, 10);
  if (!r10) throw ContractViolation("query_metrics: query " + q.query_id + " has no Exact judgment");
  m.recall10 = *r10;
  m.recall100 = *recall_at_k(r, q, 100);
  m.ndcg50 = ndcg_at_k(r, q, 50).value_or(0.0);
  m.precision5 = precision_at_k(r, q, 5);
  m.precision10 = precision_at_k(r, q, 10);
  return m;
}

ModeMetrics summarize(std::vector<QueryMetrics> per_query) {
  ModeMetrics out;
  const double n = static_cast<double>(per_query.size());
  if (!per_query.empty()) {
    for (const auto& q : per_query) {
      out.recall10 += q.recall10;
      out.recall100 += q.recall100;
      out.ndcg50 += q.ndcg50;
      out.precision5 += q.precision5;
      out.precision10 += q.precision10;
    }
    out.recall10 /= n;
    out.recall100 /= n;
    out.ndcg50 /= n;
    out.precision5 /= n;
    out.precision10 /= n;
  }
  out.per_query = std::move(per_query);
  return out;
}

MetricReport evaluate(const TwoTierIndex& index, const Tensor<float>& query_vectors,
                      const std::vector<QueryRecord>& queries, std::size_t k_shortlist) {
  if (query_vectors.rows() != queries.size()) {
    throw DimensionError("evaluate: one query vector per query required");
  }
  constexpr std::size_t kDepth = 100;
  MetricReport report;
  report.k_shortlist = k_shortlist;
  std::map<EvalMode, std::vector<QueryMetrics>> rows;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    if (q.exact_ids().empty()) continue;
    ++report.n_queries;
    const auto v = query_vectors.row(i);
    rows[EvalMode::Aggregated].push_back(query_metrics(index.stage1_shortlist(v, kDepth), q));
    rows[EvalMode::BestField].push_back(query_metrics(index.full_field_search(v, kDepth), q));
    rows[EvalMode::TwoStage].push_back(
        query_metrics(index.two_stage_search(v, k_shortlist, k_shortlist), q));
  }
  for (auto m : kEvalModes) report.modes[m] = summarize(std::move(rows[m]));
  return report;
}

}  // namespace charm
