#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "charm/corpus.hpp"
#include "charm/retrieval.hpp"

namespace charm {

/// |top-k ∩ Exact| / |Exact|; nullopt when the query has no Exact judgment.
std::optional<double> recall_at_k(const RankedResult& r, const QueryRecord& q, std::size_t k);

/// DCG@k with graded gains and a log2(rank + 1) discount over the ideal DCG of
/// the judged set; unjudged hits have gain 0. nullopt when the ideal DCG is 0.
std::optional<double> ndcg_at_k(const RankedResult& r, const QueryRecord& q, std::size_t k = 50);

/// Exact-labelled hits in the top k, divided by k.
double precision_at_k(const RankedResult& r, const QueryRecord& q, std::size_t k);

enum class EvalMode { Aggregated, BestField, TwoStage };
std::string_view to_string(EvalMode m) noexcept;
inline constexpr EvalMode kEvalModes[] = {EvalMode::Aggregated, EvalMode::BestField,
                                          EvalMode::TwoStage};

struct QueryMetrics {
  std::string query_id;
  double recall10 = 0, recall100 = 0, ndcg50 = 0, precision5 = 0, precision10 = 0;
};

struct ModeMetrics {
  double recall10 = 0, recall100 = 0, ndcg50 = 0, precision5 = 0, precision10 = 0;
  std::vector<QueryMetrics> per_query;
};

/// Averages over the evaluated queries: those with at least one Exact
/// judgment. Every mode uses the same query set.
struct MetricReport {
  std::size_t n_queries = 0;
  std::size_t k_shortlist = 100;
  std::map<EvalMode, ModeMetrics> modes;

  const ModeMetrics& at(EvalMode m) const { return modes.at(m); }
};

/// Per-query metrics for one ranked list; the query must have an Exact judgment.
QueryMetrics query_metrics(const RankedResult& r, const QueryRecord& q);

/// Aggregated: stage 1 top 100. Best-field: exhaustive field search top 100.
/// Two-Stage: shortlist of k_shortlist reranked, all kept.
MetricReport evaluate(const TwoTierIndex& index, const Tensor<float>& query_vectors,
                      const std::vector<QueryRecord>& queries, std::size_t k_shortlist = 100);

/// Mean of the per-query rows.
ModeMetrics summarize(std::vector<QueryMetrics> per_query);

}  // namespace charm
