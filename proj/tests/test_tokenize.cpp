#include <gtest/gtest.h>

#include "charm/error.hpp"
#include "charm/tokenize.hpp"
#include "test_util.hpp"

using namespace charm;
using charm::testing::TempDir;

namespace {

ProductRecord product(std::map<std::string, std::string> fields) {
  ProductRecord p;
  p.product_id = "p";
  p.field_texts = std::move(fields);
  return p;
}

}  // namespace

TEST(SplitWords, LowercasesAndSplits) {
  EXPECT_EQ(split_words("  Red  SHOE\tx "), (std::vector<std::string>{"red", "shoe", "x"}));
  EXPECT_TRUE(split_words("   ").empty());
}

TEST(Vocabulary, ReservedIdsAndOrdering) {
  const FieldSchema schema({"a", "b"});
  auto p1 = product({{"a", "x y"}, {"b", "y"}});
  auto p2 = product({{"a", "z"}, {"b", "y"}});
  p2.product_id = "q";
  QueryRecord q{"q1", "w x", {}};
  const auto v = Vocabulary::build({p1, p2}, {q}, schema);
  EXPECT_EQ(v.id("[PAD]"), kPadId);
  EXPECT_EQ(v.id("[UNK]"), kUnkId);
  EXPECT_EQ(v.id("[CLS]"), kClsId);
  EXPECT_EQ(v.id("[SEP]"), kSepId);
  EXPECT_EQ(v.id("[MASK]"), kMaskId);
  EXPECT_EQ(v.field_token(0), 5);
  EXPECT_EQ(v.field_token(1), 6);
  // y:3, x:2, then w and z (count 1) lexicographically.
  EXPECT_EQ(v.id("y"), 7);
  EXPECT_EQ(v.id("x"), 8);
  EXPECT_EQ(v.id("w"), 9);
  EXPECT_EQ(v.id("z"), 10);
  EXPECT_EQ(v.id("never"), kUnkId);
  EXPECT_TRUE(v.is_reserved(6));
  EXPECT_FALSE(v.is_reserved(7));
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  TempDir dir("vocab");
  const FieldSchema schema({"a", "b", "c"});
  const auto v = Vocabulary::build({product({{"a", "one two"}, {"b", "three"}, {"c", ""}})}, {}, schema);
  v.save(dir.path() / "v.tsv");
  const auto back = Vocabulary::load(dir.path() / "v.tsv");
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.n_fields(), 3u);
}

TEST(TokenizeProduct, Layout) {
  const FieldSchema schema({"a", "b", "c"});
  const auto p = product({{"a", "x"}, {"b", ""}, {"c", "y z"}});
  const auto v = Vocabulary::build({p}, {}, schema);
  const auto s = tokenize_product(p, schema, v, 16);
  const std::vector<TokenId> ids = {kClsId, 5, 6, 7, v.id("x"), kSepId, v.id("y"), v.id("z"), kSepId};
  ASSERT_EQ(s.size(), 16u);
  EXPECT_EQ(s.length, ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(s.ids[i], ids[i]) << i;
  for (std::size_t i = ids.size(); i < 16; ++i) {
    EXPECT_EQ(s.ids[i], kPadId);
    EXPECT_EQ(s.field_of[i], kPadSlot);
  }
  const std::vector<int> fields = {kClsSlot, 0, 1, 2, 0, 0, 2, 2, 2};
  for (std::size_t i = 0; i < fields.size(); ++i) EXPECT_EQ(s.field_of[i], fields[i]) << i;
  EXPECT_EQ(s.special_pos, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(s.cls_pos, 0u);
  EXPECT_EQ(s.trimmed().size(), ids.size());
}

TEST(TokenizeProduct, TruncatesDeepestContentFirst) {
  const FieldSchema schema({"a", "b"});
  const auto p = product({{"a", "x1 x2"}, {"b", "y1 y2 y3"}});
  const auto v = Vocabulary::build({p}, {}, schema);
  // 3 specials + "x1 x2 SEP" leaves 2 slots: one word of b plus its SEP.
  const auto s = tokenize_product(p, schema, v, 8);
  EXPECT_EQ(s.length, 8u);
  EXPECT_EQ(s.ids[6], v.id("y1"));
  EXPECT_EQ(s.ids[7], kSepId);
  EXPECT_EQ(s.field_of[7], 1);
  // No room for a word of b at all.
  const auto t = tokenize_product(p, schema, v, 7);
  EXPECT_EQ(t.length, 6u);
  EXPECT_EQ(t.ids[5], kSepId);
  EXPECT_EQ(t.field_of[5], 0);
  EXPECT_THROW(tokenize_product(p, schema, v, 2), ConfigError);
}

TEST(TokenizeQuery, ContentInFirstField) {
  const FieldSchema schema({"a", "b"});
  QueryRecord q{"q", "Hello world", {}};
  const auto v = Vocabulary::build({}, {q}, schema);
  const auto s = tokenize_query(q, schema, v, 10);
  EXPECT_EQ(s.length, 6u);
  EXPECT_EQ(s.ids[3], v.id("hello"));
  EXPECT_EQ(s.ids[5], kSepId);
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(s.field_of[i], kQueryContentField);
}

TEST(TokenizeQuery, VocabularyFieldCountMustMatch) {
  const auto v = Vocabulary::reserved_only(2);
  QueryRecord q{"q", "x", {}};
  EXPECT_THROW(tokenize_query(q, FieldSchema({"a", "b", "c"}), v), ConfigError);
}
