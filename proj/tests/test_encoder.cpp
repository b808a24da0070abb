#include <gtest/gtest.h>

#include <fstream>

#include "charm/encoder.hpp"
#include "charm/error.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace charm;
using namespace charm::testing;

namespace {

ProductRecord product(const std::string& id, const std::string& t, const std::string& b,
                      const std::string& c) {
  ProductRecord p;
  p.product_id = id;
  p.field_texts = {{"title", t}, {"brand", b}, {"color", c}};
  return p;
}

struct Setup {
  FieldSchema schema = small_schema();
  Vocabulary vocab;
  EncoderConfig cfg;
  EncoderWeights<float> weights;
};

Setup setup() {
  Setup s;
  s.vocab = Vocabulary::build({product("a", "red shoe", "acme", "blue"), product("b", "hat", "zeta", "green")},
                              {}, s.schema);
  s.cfg.n_layers = 2;
  s.cfg.n_heads = 2;
  s.cfg.model_dim = 16;
  s.cfg.ffn_dim = 32;
  s.cfg.max_positions = 32;
  s.cfg.vocab_size = s.vocab.size();
  s.cfg.n_fields = s.schema.size();
  s.weights = EncoderWeights<float>::init(s.cfg, 5);
  // Larger weights so that any leak through the mask shows up clearly.
  s.weights.for_each([](const std::string& name, Tensor<float>& t) {
    if (name.find("gain") == std::string::npos && name.find("bias") == std::string::npos) {
      for (auto& x : t.values()) x *= 20.0f;
    }
  });
  return s;
}

bool same_row(const Tensor<float>& a, const Tensor<float>& b, std::size_t r) {
  for (std::size_t c = 0; c < a.cols(); ++c) {
    if (a(r, c) != b(r, c)) return false;
  }
  return true;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EncoderConfig c;
  c.vocab_size = 10;
  c.n_fields = 2;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.n_fields = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c.vocab_size = 10;
  EXPECT_EQ(EncoderConfig::from_json(c.to_json()), c);
}

TEST(EncoderWeights, InitShapesAndStatistics) {
  auto s = setup();
  const auto w = EncoderWeights<float>::init(s.cfg, 9);
  EXPECT_EQ(w.token_embedding.shape(), (std::vector<std::size_t>{s.vocab.size(), 16}));
  EXPECT_EQ(w.aggregation.shape(), (std::vector<std::size_t>{16, 3}));
  EXPECT_EQ(w.layers.size(), 2u);
  EXPECT_EQ(w.layers[0].ln1_gain[3], 1.0f);
  EXPECT_EQ(w.layers[0].b1[0], 0.0f);
  double sq = 0;
  for (float x : w.layers[1].w1.values()) sq += double(x) * x;
  EXPECT_NEAR(std::sqrt(sq / w.layers[1].w1.numel()), 0.02, 0.002);
  EXPECT_EQ(EncoderWeights<float>::init(s.cfg, 9), w);
  EXPECT_NE(EncoderWeights<float>::init(s.cfg, 10), w);
}

TEST(EncoderWeights, CheckpointRoundTripIsBitExact) {
  auto s = setup();
  TempDir dir("ckpt");
  s.weights.save(dir.path() / "m.ckpt");
  EXPECT_EQ(EncoderWeights<float>::load(dir.path() / "m.ckpt"), s.weights);
  std::ofstream(dir.path() / "bad.ckpt") << "not a checkpoint";
  EXPECT_THROW(EncoderWeights<float>::load(dir.path() / "bad.ckpt"), IoError);
}

TEST(Encoder, BlockTriangularHidesDeeperFields) {
  auto s = setup();
  const Encoder enc(s.weights, s.vocab, s.schema, MaskVariant::BlockTriangular, RepresentationMode::Charm, 32, 32);
  const auto base = enc.encode_products({product("x", "red shoe", "acme", "blue")});
  const auto deep = enc.encode_products({product("x", "red shoe", "acme", "green")});
  const auto mid = enc.encode_products({product("x", "red shoe", "zeta", "blue")});
  EXPECT_TRUE(same_row(base.fields[0], deep.fields[0], 0));
  EXPECT_TRUE(same_row(base.fields[1], deep.fields[1], 0));
  EXPECT_FALSE(same_row(base.fields[2], deep.fields[2], 0));
  EXPECT_TRUE(same_row(base.fields[0], mid.fields[0], 0));
  EXPECT_FALSE(same_row(base.fields[1], mid.fields[1], 0));
  EXPECT_FALSE(same_row(base.fields[2], mid.fields[2], 0));
  EXPECT_FALSE(same_row(base.cls, deep.cls, 0));
}

TEST(Encoder, DiagonalAndFullMasks) {
  auto s = setup();
  const Encoder diag(s.weights, s.vocab, s.schema, MaskVariant::BlockDiagonal, RepresentationMode::Charm, 32, 32);
  const auto a = diag.encode_products({product("x", "red shoe", "acme", "blue")});
  const auto b = diag.encode_products({product("x", "hat shoe", "acme", "blue")});
  EXPECT_FALSE(same_row(a.fields[0], b.fields[0], 0));
  EXPECT_TRUE(same_row(a.fields[1], b.fields[1], 0));
  EXPECT_TRUE(same_row(a.fields[2], b.fields[2], 0));

  const Encoder full(s.weights, s.vocab, s.schema, MaskVariant::Full, RepresentationMode::Charm, 32, 32);
  const auto c = full.encode_products({product("x", "red shoe", "acme", "blue")});
  const auto d = full.encode_products({product("x", "red shoe", "acme", "green")});
  EXPECT_FALSE(same_row(c.fields[0], d.fields[0], 0));
}

TEST(Encoder, AggregationIsSoftmaxWeightedFields) {
  auto s = setup();
  const Encoder enc(s.weights, s.vocab, s.schema, MaskVariant::BlockTriangular, RepresentationMode::Charm, 32, 32);
  const auto r = enc.encode_product(product("x", "red shoe", "acme", "blue"));
  double wsum = 0;
  for (float w : r.weights) wsum += w;
  EXPECT_NEAR(wsum, 1.0, 1e-6);
  for (std::size_t c = 0; c < r.aggregated.size(); ++c) {
    double v = 0;
    for (std::size_t f = 0; f < 3; ++f) v += r.weights[f] * r.per_field(f, c);
    EXPECT_NEAR(r.aggregated[c], v, 1e-5);
  }
}

TEST(Encoder, BatchMatchesSingleSequenceEncoding) {
  auto s = setup();
  const Encoder enc(s.weights, s.vocab, s.schema, MaskVariant::BlockTriangular, RepresentationMode::Charm, 32, 32);
  const std::vector<ProductRecord> ps = {product("x", "red shoe", "acme", "blue"),
                                         product("y", "hat", "", "green blue")};
  const auto batch = enc.encode_products(ps);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto seq = enc.tokenize(ps[i]).trimmed();
    const auto h = encode(seq, build_mask(seq, MaskVariant::BlockTriangular), s.weights);
    const auto one = extract_representations(h, seq, s.weights.aggregation);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(batch.aggregated(i, c), one.aggregated[c], 1e-5);
  }
}

TEST(Encoder, ModesPickQueryAndProductVectors) {
  auto s = setup();
  QueryRecord q;
  q.text = "red shoe";
  const Encoder asym(s.weights, s.vocab, s.schema, MaskVariant::BlockTriangular, RepresentationMode::AsymCls, 32, 32);
  const auto rq = asym.encode_query(q);
  EXPECT_EQ(rq.aggregated, rq.cls);
  const Encoder bibert(s.weights, s.vocab, s.schema, MaskVariant::Full, RepresentationMode::BiBert, 32, 32);
  const auto rp = bibert.encode_product(product("x", "red shoe", "acme", "blue"));
  EXPECT_EQ(rp.aggregated, rp.cls);
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(rp.per_field(2, c), rp.cls[c]);
}

TEST(Encoder, RejectsMismatchedVocabulary) {
  auto s = setup();
  EXPECT_THROW(Encoder(s.weights, Vocabulary::reserved_only(3), s.schema, MaskVariant::BlockTriangular, RepresentationMode::Charm, 32, 32), ConfigError);
  EXPECT_THROW(Encoder(s.weights, s.vocab, FieldSchema({"a", "b"}), MaskVariant::BlockTriangular, RepresentationMode::Charm, 32, 32), ConfigError);
  EXPECT_THROW(Encoder(s.weights, s.vocab, s.schema), ConfigError);
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  Rng rng(77);
  const auto c = encoder_loss_case(rng);
  const auto r = check_gradients(c.inputs, c.build, rng, 6);
  EXPECT_LT(r.max_rel, 1e-4);
  EXPECT_GE(r.probes, 20u);
}
