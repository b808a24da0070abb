#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "charm/corpus.hpp"
#include "charm/error.hpp"
#include "test_util.hpp"

using namespace charm;
using charm::testing::TempDir;

namespace {

FieldSchema synth_schema() { return FieldSchema({"category", "brand", "title", "description"}); }

std::vector<std::string> words_of(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> w;
  for (std::string x; in >> x;) w.push_back(x);
  return w;
}

}  // namespace

TEST(FieldSchema, IndexAndReorder) {
  FieldSchema s({"a", "b", "c"});
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.index_of("b"), 1u);
  EXPECT_FALSE(s.index_of("z"));
  const auto r = s.reordered({"c", "a", "b"});
  EXPECT_EQ(r.names(), (std::vector<std::string>{"c", "a", "b"}));
  EXPECT_THROW(s.reordered({"a", "b"}), ConfigError);
  EXPECT_THROW(s.reordered({"a", "b", "z"}), ConfigError);
}

TEST(FieldSchema, RejectsDuplicates) { EXPECT_THROW(FieldSchema({"a", "a"}), ConfigError); }

TEST(Relevance, GainsAndCodes) {
  EXPECT_DOUBLE_EQ(gain(RelevanceLabel::Exact), 1.0);
  EXPECT_DOUBLE_EQ(gain(RelevanceLabel::Substitute), 0.1);
  EXPECT_DOUBLE_EQ(gain(RelevanceLabel::Complement), 0.01);
  EXPECT_DOUBLE_EQ(gain(RelevanceLabel::Irrelevant), 0.0);
  for (const char* c : {"E", "S", "C", "I"}) {
    const auto l = parse_label(c);
    ASSERT_TRUE(l);
    EXPECT_EQ(std::string(1, label_code(*l)), c);
  }
  EXPECT_FALSE(parse_label("X"));
}

TEST(CorpusIo, RoundTrip) {
  TempDir dir("corpus_io");
  const auto schema = synth_schema();
  auto corpus = generate_synthetic_corpus(SynthesisParams{.seed = 3, .n_products = 60, .n_queries = 20},
                                          schema);
  save_products(dir.path() / "p.jsonl", corpus.products, schema);
  save_queries(dir.path() / "q.jsonl", corpus.queries);
  const auto back = load_corpus(dir.path() / "p.jsonl", dir.path() / "q.jsonl", schema);
  EXPECT_EQ(back, corpus);
}

TEST(CorpusIo, MissingFieldBecomesEmpty) {
  TempDir dir("corpus_missing");
  std::ofstream(dir.path() / "p.jsonl") << R"({"product_id":"a","fields":{"title":"red shoe"}})" << '\n';
  std::ofstream(dir.path() / "q.jsonl") << R"({"query_id":"q","text":"shoe","judgments":[{"product_id":"a","label":"E"}]})"
                                       << '\n';
  const auto c = load_corpus(dir.path() / "p.jsonl", dir.path() / "q.jsonl", FieldSchema({"title", "brand"}));
  EXPECT_EQ(c.products[0].text("brand"), "");
  EXPECT_EQ(c.products[0].text("title"), "red shoe");
}

TEST(CorpusIo, UnknownProductInJudgment) {
  TempDir dir("corpus_ref");
  std::ofstream(dir.path() / "p.jsonl") << R"({"product_id":"a","fields":{"title":"x"}})" << '\n';
  std::ofstream(dir.path() / "q.jsonl") << R"({"query_id":"q","text":"x","judgments":[{"product_id":"b","label":"E"}]})"
                                       << '\n';
  EXPECT_THROW(load_corpus(dir.path() / "p.jsonl", dir.path() / "q.jsonl", FieldSchema({"title"})),
               ReferentialIntegrityError);
}

TEST(CorpusIo, MalformedLineReportsParseError) {
  TempDir dir("corpus_bad");
  std::ofstream(dir.path() / "p.jsonl") << R"({"product_id":"a","fields":{"title":"x"}})" << "\n{oops\n";
  EXPECT_THROW(load_products(dir.path() / "p.jsonl", FieldSchema({"title"})), ParseError);
}

TEST(CorpusIo, DuplicateProductId) {
  Corpus c;
  ProductRecord p;
  p.product_id = "a";
  p.field_texts["title"] = "x";
  c.products = {p, p};
  EXPECT_THROW(validate_corpus(c, FieldSchema({"title"})), ReferentialIntegrityError);
}

TEST(Synthetic, DeterministicForSeed) {
  const auto schema = synth_schema();
  SynthesisParams p{.seed = 11, .n_products = 300, .n_queries = 60};
  EXPECT_EQ(generate_synthetic_corpus(p, schema), generate_synthetic_corpus(p, schema));
  auto q = p;
  q.seed = 12;
  EXPECT_NE(generate_synthetic_corpus(p, schema), generate_synthetic_corpus(q, schema));
}

TEST(Synthetic, ShapeAndUniqueQueries) {
  const auto schema = synth_schema();
  const auto c = generate_synthetic_corpus(SynthesisParams{.seed = 5}, schema);
  EXPECT_EQ(c.products.size(), 2000u);
  EXPECT_EQ(c.queries.size(), 300u);
  std::set<std::string> texts;
  for (const auto& q : c.queries) texts.insert(q.text);
  EXPECT_EQ(texts.size(), c.queries.size());
  std::set<std::string> types;
  for (const auto& p : c.products) {
    ASSERT_TRUE(p.product_type);
    types.insert(*p.product_type);
  }
  EXPECT_EQ(types.size(), 6u);
  validate_corpus(c, schema);
}

TEST(Synthetic, DeeperFieldsAreLonger) {
  const auto schema = synth_schema();
  const auto c = generate_synthetic_corpus(SynthesisParams{.seed = 5, .n_products = 50, .n_queries = 10}, schema);
  for (const auto& p : c.products) {
    for (std::size_t f = 0; f < schema.size(); ++f) {
      EXPECT_EQ(words_of(p.text(schema.name(f))).size(), f + 1);
    }
  }
}

// Exact judgments must equal plain string matching, computed here from scratch:
// a product is Exact iff every query word occurs somewhere in its fields.
TEST(Synthetic, ExactSetMatchesIndependentStringMatch) {
  const auto schema = synth_schema();
  for (double rate : {1.0, 0.5}) {
    SynthesisParams params{.seed = 21, .n_products = 400, .n_queries = 80};
    params.shallow_label_rate = rate;
    const auto c = generate_synthetic_corpus(params, schema);
    for (const auto& q : c.queries) {
      std::vector<std::string> expect;
      for (const auto& p : c.products) {
        std::set<std::string> have;
        for (const auto& n : schema.names()) {
          for (const auto& w : words_of(p.text(n))) have.insert(w);
        }
        bool all = true;
        for (const auto& w : words_of(q.text)) all = all && have.count(w);
        if (all) expect.push_back(p.product_id);
      }
      EXPECT_EQ(q.exact_ids(), expect) << q.text;
      EXPECT_FALSE(expect.empty());
    }
  }
}

TEST(Synthetic, PrefixQueriesAndSubstitutes) {
  const auto schema = synth_schema();
  const auto c = generate_synthetic_corpus(SynthesisParams{.seed = 2, .n_products = 500, .n_queries = 100}, schema);
  std::map<std::string, const ProductRecord*> by_id;
  for (const auto& p : c.products) by_id[p.product_id] = &p;
  for (const auto& q : c.queries) {
    const auto w = words_of(q.text);
    // Default queries name the labels of depths 0..t in order.
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_EQ(w[i].rfind(schema.name(i), 0), 0u) << q.text;
    }
    for (const auto& j : q.judgments) {
      if (j.label != RelevanceLabel::Substitute) continue;
      const auto* p = by_id.at(j.product_id);
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        const auto fw = words_of(p->text(schema.name(i)));
        EXPECT_NE(std::find(fw.begin(), fw.end(), w[i]), fw.end());
      }
      const auto last = words_of(p->text(schema.name(w.size() - 1)));
      EXPECT_EQ(std::find(last.begin(), last.end(), w.back()), last.end());
    }
  }
}

TEST(Synthetic, RejectsBadParams) {
  const auto schema = synth_schema();
  EXPECT_THROW(generate_synthetic_corpus(SynthesisParams{.n_products = 0}, schema), ConfigError);
  SynthesisParams p;
  p.branching = {4, 4};
  EXPECT_THROW(generate_synthetic_corpus(p, schema), ConfigError);
  p.branching = {};
  p.shallow_label_rate = 1.5;
  EXPECT_THROW(generate_synthetic_corpus(p, schema), ConfigError);
}

TEST(TrainingPairs, SamplesFromJudgments) {
  QueryRecord q;
  q.query_id = "q";
  q.judgments = {{"a", RelevanceLabel::Exact}, {"b", RelevanceLabel::Exact}, {"c", RelevanceLabel::Substitute}};
  Rng rng(4);
  std::set<std::string> pos;
  for (int i = 0; i < 200; ++i) {
    const auto pair = sample_training_pair(q, rng);
    ASSERT_TRUE(pair);
    pos.insert(pair->positive_id);
    ASSERT_TRUE(pair->hard_negative_id);
    EXPECT_EQ(*pair->hard_negative_id, "c");
  }
  EXPECT_EQ(pos, (std::set<std::string>{"a", "b"}));

  QueryRecord only_exact = q;
  only_exact.judgments.pop_back();
  EXPECT_FALSE(sample_training_pair(only_exact, rng)->hard_negative_id);

  QueryRecord none;
  none.judgments = {{"c", RelevanceLabel::Irrelevant}};
  EXPECT_FALSE(sample_training_pair(none, rng));
}

TEST(Split, LastQueriesFormTestSplit) {
  std::vector<QueryRecord> qs(5);
  for (std::size_t i = 0; i < 5; ++i) qs[i].query_id = std::to_string(i);
  const auto [train, test] = split_queries(qs, 2);
  ASSERT_EQ(train.size(), 3u);
  ASSERT_EQ(test.size(), 2u);
  EXPECT_EQ(test[0].query_id, "3");
  EXPECT_THROW(split_queries(qs, 6), ConfigError);
}
