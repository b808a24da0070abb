#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "charm/analysis.hpp"
#include "charm/error.hpp"
#include "diversity_oracle.hpp"
#include "retrieval_oracle.hpp"

using namespace charm;
using namespace charm::testing;

namespace {

Hit hit(const std::string& id, int field) { return {id, 0, 1.0, field}; }

}  // namespace

TEST(Entropy, HandCase) {
  const std::vector<RankedResult> results = {{hit("a", 0), hit("b", 0), hit("c", 1), hit("d", 2)}};
  const std::map<std::string, std::string> types = {{"a", "t1"}, {"b", "t1"}, {"c", "t2"}, {"d", "t3"}};
  const auto curve = match_entropy_curve(results, types, {1, 2, 4, 10});
  EXPECT_NEAR(curve[0], 0.0, 1e-12);
  EXPECT_NEAR(curve[1], 0.0, 1e-12);
  EXPECT_NEAR(curve[2], 1.0397207708399179, 1e-12);
  EXPECT_NEAR(curve[3], 1.0397207708399179, 1e-12);
}

TEST(Diversity, MatchesBruteForce) {
  Rng rng(41);
  const std::size_t m = 30, d = 5;
  Tensor<float> x(m, d);
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  const auto s = diversity_stats(x);

  const auto ref = diversity_reference(x);
  EXPECT_EQ(s.n_pairs, m * (m - 1) / 2);
  EXPECT_NEAR(s.mean_euclidean, ref.mean_euclidean, 1e-10);
  EXPECT_NEAR(s.mean_dot, ref.mean_dot, 1e-10);
  EXPECT_NEAR(s.epsilon, ref.epsilon, 1e-15);
  EXPECT_NEAR(s.log_det, ref.log_det, 1e-9);
}

TEST(Diversity, SamplesPairsAndHandlesRankDeficiency) {
  Tensor<float> same(10, 3, 1.0f);
  const auto s = diversity_stats(same, 5, 1);
  EXPECT_EQ(s.n_pairs, 5u);
  EXPECT_EQ(s.mean_euclidean, 0.0);
  EXPECT_EQ(s.epsilon, 1e-6);
  EXPECT_NEAR(s.log_det, 3 * std::log(1e-6), 1e-9);
}

TEST(Histograms, FieldsAndDistinctCounts) {
  const std::vector<RankedResult> results = {{hit("a", 0), hit("b", 2), hit("c", 2)}, {hit("a", 1)}};
  EXPECT_EQ(match_field_histogram(results, 3, 2), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_EQ(match_field_histogram(results, 3, 10), (std::vector<std::size_t>{1, 1, 2}));
  const auto per_query = fields_per_query_histogram(results, 10);
  EXPECT_EQ(per_query.at(2), 1u);
  EXPECT_EQ(per_query.at(1), 1u);
  EXPECT_THROW(match_field_histogram({{hit("a", kAggregatedField)}}, 3, 1), DimensionError);
}

TEST(QueryLength, AveragesByTopField) {
  std::vector<QueryRecord> qs(3);
  qs[0].text = "ab";
  qs[1].text = "abcd";
  qs[2].text = "caf\xc3\xa9";
  const std::vector<RankedResult> results = {{hit("a", 1)}, {hit("a", 1)}, {hit("a", 0)}};
  const auto len = query_length_by_field(results, qs, 3);
  EXPECT_DOUBLE_EQ(len[0], 4.0);
  EXPECT_DOUBLE_EQ(len[1], 3.0);
  EXPECT_DOUBLE_EQ(len[2], 0.0);
}

TEST(Preservation, FullShortlistKeepsEverything) {
  Rng rng(42);
  const auto c = random_oracle_corpus(rng, 30, 3, 4);
  std::vector<Tensor<float>> fields;
  for (const auto& f : c.fields) fields.push_back(c.matrix(f));
  const TwoTierIndex index(c.ids, c.matrix(c.agg), fields);
  Tensor<float> qv(5, 4);
  for (auto& v : qv.values()) v = static_cast<float>(rng.normal());
  const auto curve = preservation_curve(index, qv, {1, 30}, {1, 5});
  EXPECT_DOUBLE_EQ(curve[1][0], 1.0);
  EXPECT_DOUBLE_EQ(curve[1][1], 1.0);
  EXPECT_LE(curve[0][1], 0.2 + 1e-12);

  // Independent count for s = 1, k = 1.
  double want = 0;
  for (std::size_t q = 0; q < 5; ++q) {
    std::vector<float> v(qv.row(q).begin(), qv.row(q).end());
    want += c.two_stage(v, 1, 1)[0].id == c.full(v, 1)[0].id;
  }
  EXPECT_DOUBLE_EQ(curve[0][0], want / 5);
}

TEST(AggregationWeights, MeanPerType) {
  Tensor<float> w(3, 2, std::vector<float>{0.2f, 0.8f, 0.4f, 0.6f, 1.0f, 0.0f});
  const auto m = aggregation_weight_by_type(w, {"x", "x", "y"}, 0);
  EXPECT_NEAR(m.at("x"), 0.3, 1e-7);
  EXPECT_NEAR(m.at("y"), 1.0, 1e-7);
  EXPECT_THROW(aggregation_weight_by_type(w, {"x"}, 0), DimensionError);
}

TEST(Reports, WritersAgree) {
  const std::vector<ReportRow> rows = {{"recall@10", "two_stage", 0.5}, {"note", "a,b", 1.25}};
  std::ostringstream csv, jsonl, table;
  write_csv(csv, rows);
  write_jsonl(jsonl, rows);
  write_table(table, "t", rows);
  EXPECT_EQ(csv.str(), "metric,key,value\nrecall@10,two_stage,0.5\nnote,\"a,b\",1.25\n");
  EXPECT_EQ(jsonl.str(), "{\"metric\":\"recall@10\",\"key\":\"two_stage\",\"value\":0.5}\n"
                         "{\"metric\":\"note\",\"key\":\"a,b\",\"value\":1.25}\n");
  EXPECT_NE(table.str().find("0.500000"), std::string::npos);
}
