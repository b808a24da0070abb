#include <gtest/gtest.h>

#include "charm/error.hpp"
#include "charm/metrics.hpp"

using namespace charm;

namespace {

RankedResult ranked(std::initializer_list<const char*> ids) {
  RankedResult r;
  double s = 10;
  for (const char* id : ids) r.push_back({id, 0, s--, 0});
  return r;
}

QueryRecord query(std::initializer_list<std::pair<const char*, RelevanceLabel>> js) {
  QueryRecord q;
  q.query_id = "q";
  for (const auto& [id, l] : js) q.judgments.push_back({id, l});
  return q;
}

}  // namespace

TEST(Ndcg, SingleExactAtRankTwo) {
  const auto q = query({{"a", RelevanceLabel::Exact}});
  EXPECT_NEAR(*ndcg_at_k(ranked({"x", "a", "y"}), q), 0.6309297535714575, 1e-12);
  EXPECT_NEAR(*ndcg_at_k(ranked({"a"}), q), 1.0, 1e-12);
  EXPECT_NEAR(*ndcg_at_k(ranked({"x", "a"}), q, 1), 0.0, 1e-12);
}

TEST(Ndcg, GradedGains) {
  const auto q = query({{"a", RelevanceLabel::Exact}, {"b", RelevanceLabel::Substitute},
                        {"c", RelevanceLabel::Irrelevant}});
  EXPECT_NEAR(*ndcg_at_k(ranked({"c", "b", "a", "x"}), q), 0.5296742508979281, 1e-12);
  EXPECT_FALSE(ndcg_at_k(ranked({"c"}), query({{"c", RelevanceLabel::Irrelevant}})).has_value());
}

TEST(Recall, UsesExactSetAsDenominator) {
  const auto q = query({{"a", RelevanceLabel::Exact}, {"b", RelevanceLabel::Exact},
                        {"c", RelevanceLabel::Exact}, {"d", RelevanceLabel::Substitute}});
  EXPECT_NEAR(*recall_at_k(ranked({"d", "a", "x", "c"}), q, 10), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(*recall_at_k(ranked({"d", "a", "x", "c"}), q, 2), 1.0 / 3.0, 1e-12);
  EXPECT_FALSE(recall_at_k(ranked({"a"}), query({{"a", RelevanceLabel::Substitute}}), 10).has_value());
}

TEST(Precision, DividesByK) {
  const auto q = query({{"a", RelevanceLabel::Exact}, {"b", RelevanceLabel::Exact}});
  EXPECT_DOUBLE_EQ(precision_at_k(ranked({"a", "x", "b"}), q, 5), 0.4);
  EXPECT_DOUBLE_EQ(precision_at_k(ranked({"a", "x", "b"}), q, 2), 0.5);
  EXPECT_THROW(precision_at_k(ranked({"a"}), q, 0), ConfigError);
}

TEST(QueryMetrics, RequiresExactJudgment) {
  EXPECT_THROW(query_metrics(ranked({"a"}), query({{"a", RelevanceLabel::Substitute}})), ContractViolation);
}

TEST(Evaluate, SkipsQueriesWithoutExactAndAverages) {
  // Product p1 wins on its aggregate; p0 wins on field 1.
  Tensor<float> agg(2, 2, std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f});
  std::vector<Tensor<float>> fields = {Tensor<float>(2, 2, std::vector<float>{0.0f, 0.0f, 0.5f, 0.0f}),
                                       Tensor<float>(2, 2, std::vector<float>{2.0f, 0.0f, 0.0f, 0.0f})};
  const TwoTierIndex index({"p0", "p1"}, agg, fields);
  Tensor<float> qv(2, 2, std::vector<float>{1.0f, 0.0f, 1.0f, 0.0f});
  QueryRecord a = query({{"p0", RelevanceLabel::Exact}});
  a.query_id = "qa";
  QueryRecord b = query({{"p1", RelevanceLabel::Substitute}});
  b.query_id = "qb";
  const auto rep = evaluate(index, qv, {a, b}, 2);
  EXPECT_EQ(rep.n_queries, 1u);
  ASSERT_EQ(rep.modes.size(), 3u);
  EXPECT_NEAR(rep.at(EvalMode::Aggregated).ndcg50, 0.6309297535714575, 1e-12);
  EXPECT_NEAR(rep.at(EvalMode::BestField).ndcg50, 1.0, 1e-12);
  EXPECT_NEAR(rep.at(EvalMode::TwoStage).ndcg50, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(rep.at(EvalMode::TwoStage).recall10, 1.0);
  EXPECT_DOUBLE_EQ(rep.at(EvalMode::Aggregated).precision5, 0.2);
  ASSERT_EQ(rep.at(EvalMode::TwoStage).per_query.size(), 1u);
  EXPECT_EQ(rep.at(EvalMode::TwoStage).per_query[0].query_id, "qa");
}

TEST(Summarize, MeansOverRows) {
  std::vector<QueryMetrics> rows(2);
  rows[0].recall10 = 1.0;
  rows[1].ndcg50 = 0.5;
  const auto m = summarize(rows);
  EXPECT_DOUBLE_EQ(m.recall10, 0.5);
  EXPECT_DOUBLE_EQ(m.ndcg50, 0.25);
  EXPECT_EQ(summarize({}).recall10, 0.0);
}
