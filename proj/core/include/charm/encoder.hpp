#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "charm/attention_mask.hpp"
#include "charm/autograd.hpp"
#include "charm/tensor.hpp"
#include "charm/tokenize.hpp"

namespace charm {

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 256;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 128;
  std::size_t n_fields = 0;
  double layer_norm_eps = 1e-5;

  /// Throws ConfigError.
  void validate() const;
  std::string to_json() const;
  static EncoderConfig from_json(const std::string& text);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// How retrieval vectors are read off the encoder output.
enum class RepresentationMode : std::uint8_t {
  Charm,    ///< query and product both use the aggregated vector
  AsymCls,  ///< the query uses its CLS vector, products stay aggregated
  BiBert,   ///< both sides use CLS; every product field slot holds CLS too
};

std::string_view to_string(RepresentationMode m) noexcept;
RepresentationMode parse_representation_mode(std::string_view name);

template <typename Real>
struct LayerWeights {
  Tensor<Real> wq, wk, wv, wo;
  Tensor<Real> w1, b1, w2, b2;
  Tensor<Real> ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Post-LN transformer weights plus the d x |F| aggregation projection.
template <typename Real>
struct EncoderWeights {
  EncoderConfig config;
  Tensor<Real> token_embedding;     ///< vocab x d
  Tensor<Real> position_embedding;  ///< max_positions x d
  Tensor<Real> embed_ln_gain, embed_ln_bias;
  std::vector<LayerWeights<Real>> layers;
  Tensor<Real> aggregation;  ///< d x |F|, column f scores field f

  /// Embeddings, projections and the aggregation matrix ~ N(0, 0.02^2); biases
  /// zero; layer-norm gains one.
  static EncoderWeights init(const EncoderConfig& config, std::uint64_t seed);

  /// Visits (name, tensor) in a fixed order, the checkpoint order.
  template <typename Fn>
  void for_each(Fn&& fn);
  template <typename Fn>
  void for_each(Fn&& fn) const;

  std::vector<Tensor<Real>*> parameters();
  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename Other>
  EncoderWeights<Other> cast() const;

  void save(const std::filesystem::path& path) const;
  /// Validates the stored config and every tensor shape.
  static EncoderWeights load(const std::filesystem::path& path);

  friend bool operator==(const EncoderWeights&, const EncoderWeights&) = default;
};

/// Weights attached to a tape as leaves, in for_each order.
template <typename Real>
struct TapeWeights {
  struct Layer {
    Var<Real> wq, wk, wv, wo, w1, b1, w2, b2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  };
  Var<Real> token_embedding, position_embedding, embed_ln_gain, embed_ln_bias;
  std::vector<Layer> layers;
  Var<Real> aggregation;
  std::vector<Var<Real>> leaves;
};

template <typename Real>
TapeWeights<Real> attach(Tape<Real>& tape, const EncoderWeights<Real>& weights,
                         bool requires_grad);

/// Encodes sequences packed back to back. Returns (sum of lengths) x d; row
/// offsets follow the order of `seqs`. PAD positions are encoded like any other
/// token, so callers usually pass trimmed sequences.
template <typename Real>
Var<Real> encode_packed(const TapeWeights<Real>& w, const EncoderConfig& config,
                        std::span<const TokenizedSequence> seqs,
                        std::span<const AttentionMask> masks);

/// Tape-level representations of N packed sequences. fields[f], cls and
/// aggregated are N x d; weights is N x |F|.
template <typename Real>
struct RepresentationVars {
  std::vector<Var<Real>> fields;
  Var<Real> cls;
  Var<Real> weights;
  Var<Real> aggregated;
};

template <typename Real>
RepresentationVars<Real> extract_packed(Var<Real> hidden, std::span<const TokenizedSequence> seqs,
                                        Var<Real> aggregation);

/// Rewrites product-side representations for a mode (BiBert replaces every
/// field and the aggregate by CLS).
template <typename Real>
RepresentationVars<Real> product_view(RepresentationVars<Real> r, RepresentationMode mode);
/// N x d query vectors for a mode.
template <typename Real>
Var<Real> query_vectors(const RepresentationVars<Real>& r, RepresentationMode mode);

template <typename Real>
struct RepresentationSet {
  Tensor<Real> per_field;  ///< |F| x d
  std::vector<Real> cls;
  std::vector<Real> weights;
  std::vector<Real> aggregated;

  friend bool operator==(const RepresentationSet&, const RepresentationSet&) = default;
};

/// Single sequence, value level. Returns L x d.
template <typename Real>
Tensor<Real> encode(const TokenizedSequence& seq, const AttentionMask& mask,
                    const EncoderWeights<Real>& weights);

template <typename Real>
RepresentationSet<Real> extract_representations(const Tensor<Real>& hidden,
                                                const TokenizedSequence& seq,
                                                const Tensor<Real>& aggregation);

/// Row-aligned representations of many sequences.
template <typename Real>
struct BatchRepresentations {
  std::vector<Tensor<Real>> fields;  ///< |F| matrices, N x d
  Tensor<Real> cls;                  ///< N x d
  Tensor<Real> weights;              ///< N x |F|
  Tensor<Real> aggregated;           ///< N x d

  std::size_t size() const noexcept { return cls.rows(); }
  RepresentationSet<Real> at(std::size_t i) const;
};

/// Forward-only encoding in chunks of `chunk` sequences. Sequences are trimmed
/// before encoding.
template <typename Real>
BatchRepresentations<Real> encode_batch(const EncoderWeights<Real>& weights,
                                        std::span<const TokenizedSequence> seqs,
                                        MaskVariant variant, std::size_t chunk = 256);

/// Tokenize, mask, encode, extract with one set of shared weights.
class Encoder {
 public:
  Encoder(EncoderWeights<float> weights, Vocabulary vocab, FieldSchema schema,
          MaskVariant variant = MaskVariant::BlockTriangular,
          RepresentationMode mode = RepresentationMode::Charm,
          std::size_t product_max_len = 128, std::size_t query_max_len = 32);

  const EncoderWeights<float>& weights() const noexcept { return weights_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const FieldSchema& schema() const noexcept { return schema_; }
  MaskVariant variant() const noexcept { return variant_; }
  RepresentationMode mode() const noexcept { return mode_; }

  TokenizedSequence tokenize(const ProductRecord& p) const;
  TokenizedSequence tokenize(const QueryRecord& q) const;

  /// Product side, after the mode's product view.
  RepresentationSet<float> encode_product(const ProductRecord& p) const;
  /// Query side; `aggregated` holds the mode's query vector.
  RepresentationSet<float> encode_query(const QueryRecord& q) const;

  BatchRepresentations<float> encode_products(const std::vector<ProductRecord>& products) const;
  BatchRepresentations<float> encode_queries(const std::vector<QueryRecord>& queries) const;

 private:
  EncoderWeights<float> weights_;
  Vocabulary vocab_;
  FieldSchema schema_;
  MaskVariant variant_;
  RepresentationMode mode_;
  std::size_t product_max_len_;
  std::size_t query_max_len_;
};

template <typename Real>
template <typename Fn>
void EncoderWeights<Real>::for_each(Fn&& fn) {
  fn("token_embedding", token_embedding);
  fn("position_embedding", position_embedding);
  fn("embed_ln_gain", embed_ln_gain);
  fn("embed_ln_bias", embed_ln_bias);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    fn(p + "wq", L.wq);
    fn(p + "wk", L.wk);
    fn(p + "wv", L.wv);
    fn(p + "wo", L.wo);
    fn(p + "w1", L.w1);
    fn(p + "b1", L.b1);
    fn(p + "w2", L.w2);
    fn(p + "b2", L.b2);
    fn(p + "ln1_gain", L.ln1_gain);
    fn(p + "ln1_bias", L.ln1_bias);
    fn(p + "ln2_gain", L.ln2_gain);
    fn(p + "ln2_bias", L.ln2_bias);
  }
  fn("aggregation", aggregation);
}

template <typename Real>
template <typename Fn>
void EncoderWeights<Real>::for_each(Fn&& fn) const {
  const_cast<EncoderWeights*>(this)->for_each(
      [&](const std::string& name, Tensor<Real>& t) { fn(name, static_cast<const Tensor<Real>&>(t)); });
}

template <typename Real>
template <typename Other>
EncoderWeights<Other> EncoderWeights<Real>::cast() const {
  EncoderWeights<Other> out;
  out.config = config;
  out.layers.resize(layers.size());
  std::vector<const Tensor<Real>*> src;
  for_each([&](const std::string&, const Tensor<Real>& t) { src.push_back(&t); });
  std::size_t k = 0;
  out.for_each([&](const std::string&, Tensor<Other>& t) { t = src[k++]->template cast<Other>(); });
  return out;
}

}  // namespace charm
