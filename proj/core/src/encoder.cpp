#include "charm/encoder.hpp"

#include <cmath>
#include <memory>

#include <nlohmann/json.hpp>

#include "charm/checkpoint.hpp"
#include "charm/error.hpp"
#include "charm/rng.hpp"

namespace charm {

void EncoderConfig::validate() const {
  if (n_heads == 0 || model_dim == 0 || model_dim % n_heads != 0) {
    throw ConfigError("encoder: model_dim must be a positive multiple of n_heads");
  }
  if (ffn_dim == 0) throw ConfigError("encoder: ffn_dim must be positive");
  if (vocab_size == 0) throw ConfigError("encoder: vocab_size must be positive");
  if (max_positions == 0) throw ConfigError("encoder: max_positions must be positive");
  if (n_fields == 0) throw ConfigError("encoder: n_fields must be positive");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("encoder: layer_norm_eps must be positive");
}

std::string EncoderConfig::to_json() const {
  nlohmann::ordered_json j;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["model_dim"] = model_dim;
  j["ffn_dim"] = ffn_dim;
  j["vocab_size"] = vocab_size;
  j["max_positions"] = max_positions;
  j["n_fields"] = n_fields;
  j["layer_norm_eps"] = layer_norm_eps;
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("encoder config header: ") + e.what());
  }
  EncoderConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.n_fields = j.at("n_fields").get<std::size_t>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("encoder config header: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view to_string(RepresentationMode m) noexcept {
  switch (m) {
    case RepresentationMode::Charm: return "charm";
    case RepresentationMode::AsymCls: return "asym_cls";
    case RepresentationMode::BiBert: return "bibert";
  }
  return "charm";
}

RepresentationMode parse_representation_mode(std::string_view name) {
  if (name == "charm") return RepresentationMode::Charm;
  if (name == "asym_cls") return RepresentationMode::AsymCls;
  if (name == "bibert") return RepresentationMode::BiBert;
  throw ConfigError("unknown representation mode '" + std::string(name) + "'");
}

namespace {

template <typename Real>
EncoderWeights<Real> allocate(const EncoderConfig& c) {
  const std::size_t d = c.model_dim;
  EncoderWeights<Real> w;
  w.config = c;
  w.token_embedding = Tensor<Real>(c.vocab_size, d);
  w.position_embedding = Tensor<Real>(c.max_positions, d);
  w.embed_ln_gain = Tensor<Real>(1, d, Real(1));
  w.embed_ln_bias = Tensor<Real>(1, d);
  w.layers.resize(c.n_layers);
  for (auto& L : w.layers) {
    L.wq = Tensor<Real>(d, d);
    L.wk = Tensor<Real>(d, d);
    L.wv = Tensor<Real>(d, d);
    L.wo = Tensor<Real>(d, d);
    L.w1 = Tensor<Real>(d, c.ffn_dim);
    L.b1 = Tensor<Real>(1, c.ffn_dim);
    L.w2 = Tensor<Real>(c.ffn_dim, d);
    L.b2 = Tensor<Real>(1, d);
    L.ln1_gain = Tensor<Real>(1, d, Real(1));
    L.ln1_bias = Tensor<Real>(1, d);
    L.ln2_gain = Tensor<Real>(1, d, Real(1));
    L.ln2_bias = Tensor<Real>(1, d);
  }
  w.aggregation = Tensor<Real>(d, c.n_fields);
  return w;
}

bool is_random_init(const std::string& name) {
  const auto dot = name.find('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "token_embedding" || leaf == "position_embedding" || leaf == "aggregation" ||
         leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "wo" || leaf == "w1" ||
         leaf == "w2";
}

}  // namespace

template <typename Real>
EncoderWeights<Real> EncoderWeights<Real>::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  auto w = allocate<Real>(config);
  Rng rng(seed);
  w.for_each([&](const std::string& name, Tensor<Real>& t) {
    if (!is_random_init(name)) return;
    for (auto& x : t.values()) x = static_cast<Real>(rng.normal(0.0, 0.02));
  });
  return w;
}

template <typename Real>
std::vector<Tensor<Real>*> EncoderWeights<Real>::parameters() {
  std::vector<Tensor<Real>*> out;
  for_each([&](const std::string&, Tensor<Real>& t) { out.push_back(&t); });
  return out;
}

template <typename Real>
std::size_t EncoderWeights<Real>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor<Real>& t) { n += t.numel(); });
  return n;
}

template <typename Real>
bool EncoderWeights<Real>::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Tensor<Real>& t) {
    for (Real x : t.values()) ok = ok && std::isfinite(x);
  });
  return ok;
}

template <typename Real>
void EncoderWeights<Real>::save(const std::filesystem::path& path) const {
  std::vector<NamedTensor<Real>> tensors;
  for_each([&](const std::string& name, const Tensor<Real>& t) { tensors.push_back({name, t}); });
  save_checkpoint<Real>(path, config.to_json(), tensors);
}

template <typename Real>
EncoderWeights<Real> EncoderWeights<Real>::load(const std::filesystem::path& path) {
  auto ck = load_checkpoint<Real>(path);
  const auto config = EncoderConfig::from_json(ck.header);
  auto w = allocate<Real>(config);
  std::size_t k = 0;
  w.for_each([&](const std::string& name, Tensor<Real>& t) {
    if (k >= ck.tensors.size()) throw IoError("checkpoint is missing tensor '" + name + "'");
    auto& src = ck.tensors[k++];
    if (src.name != name) {
      throw IoError("checkpoint tensor '" + src.name + "' found where '" + name + "' was expected");
    }
    if (!src.tensor.same_shape(t)) throw IoError("checkpoint tensor '" + name + "' has the wrong shape");
    t = std::move(src.tensor);
  });
  if (k != ck.tensors.size()) throw IoError("checkpoint has unexpected extra tensors");
  return w;
}

template <typename Real>
TapeWeights<Real> attach(Tape<Real>& tape, const EncoderWeights<Real>& weights,
                         bool requires_grad) {
  TapeWeights<Real> tw;
  weights.for_each([&](const std::string&, const Tensor<Real>& t) {
    tw.leaves.push_back(tape.leaf(t, requires_grad));
  });
  std::size_t k = 0;
  auto next = [&] { return tw.leaves[k++]; };
  tw.token_embedding = next();
  tw.position_embedding = next();
  tw.embed_ln_gain = next();
  tw.embed_ln_bias = next();
  tw.layers.resize(weights.layers.size());
  for (auto& L : tw.layers) {
    L.wq = next();
    L.wk = next();
    L.wv = next();
    L.wo = next();
    L.w1 = next();
    L.b1 = next();
    L.w2 = next();
    L.b2 = next();
    L.ln1_gain = next();
    L.ln1_bias = next();
    L.ln2_gain = next();
    L.ln2_bias = next();
  }
  tw.aggregation = next();
  return tw;
}

template <typename Real>
Var<Real> encode_packed(const TapeWeights<Real>& w, const EncoderConfig& config,
                        std::span<const TokenizedSequence> seqs,
                        std::span<const AttentionMask> masks) {
  if (seqs.size() != masks.size()) throw DimensionError("encode: one mask per sequence required");
  if (seqs.empty()) throw DimensionError("encode: no sequences");
  std::vector<std::int32_t> ids, positions;
  auto segments = std::make_shared<std::vector<ops::AttentionSegment>>();
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const std::size_t L = seq.size();
    if (L == 0) throw DimensionError("encode: empty sequence");
    if (L > config.max_positions) {
      throw DimensionError("encode: sequence of length " + std::to_string(L) +
                           " exceeds max_positions " + std::to_string(config.max_positions));
    }
    if (masks[s].size() != L) throw DimensionError("encode: mask was built for another sequence");
    ops::AttentionSegment seg;
    seg.offset = ids.size();
    seg.length = L;
    seg.allow = masks[s].data();
    segments->push_back(std::move(seg));
    for (std::size_t i = 0; i < L; ++i) {
      ids.push_back(seq.ids[i]);
      positions.push_back(static_cast<std::int32_t>(i));
    }
  }
  const Real eps = static_cast<Real>(config.layer_norm_eps);
  std::shared_ptr<const std::vector<ops::AttentionSegment>> segs = segments;

  Var<Real> x = ops::add(ops::embedding_lookup(w.token_embedding, std::span<const std::int32_t>(ids)),
                         ops::embedding_lookup(w.position_embedding,
                                               std::span<const std::int32_t>(positions)));
  x = ops::layer_norm(x, w.embed_ln_gain, w.embed_ln_bias, eps);
  for (const auto& L : w.layers) {
    auto q = ops::matmul(x, L.wq);
    auto k = ops::matmul(x, L.wk);
    auto v = ops::matmul(x, L.wv);
    auto att = ops::matmul(ops::masked_attention(q, k, v, segs, config.n_heads), L.wo);
    x = ops::layer_norm(ops::add(x, att), L.ln1_gain, L.ln1_bias, eps);
    auto h = ops::gelu(ops::add_row(ops::matmul(x, L.w1), L.b1));
    auto f = ops::add_row(ops::matmul(h, L.w2), L.b2);
    x = ops::layer_norm(ops::add(x, f), L.ln2_gain, L.ln2_bias, eps);
  }
  return x;
}

template <typename Real>
RepresentationVars<Real> extract_packed(Var<Real> hidden, std::span<const TokenizedSequence> seqs,
                                        Var<Real> aggregation) {
  const std::size_t n_fields = aggregation.cols();
  std::vector<std::vector<std::size_t>> field_rows(n_fields);
  std::vector<std::size_t> cls_rows;
  std::size_t offset = 0;
  for (const auto& seq : seqs) {
    if (seq.n_fields() != n_fields) {
      throw DimensionError("extract: sequence field count differs from the aggregation matrix");
    }
    for (std::size_t f = 0; f < n_fields; ++f) field_rows[f].push_back(offset + seq.special_pos[f]);
    cls_rows.push_back(offset + seq.cls_pos);
    offset += seq.size();
  }
  if (offset != hidden.rows()) throw DimensionError("extract: hidden rows do not match sequences");

  RepresentationVars<Real> r;
  for (std::size_t f = 0; f < n_fields; ++f) {
    r.fields.push_back(ops::select_rows(hidden, std::span<const std::size_t>(field_rows[f])));
  }
  r.cls = ops::select_rows(hidden, std::span<const std::size_t>(cls_rows));
  r.weights = ops::softmax_rows(ops::matmul(r.cls, aggregation));
  r.aggregated = ops::scale_rows(r.fields[0], ops::slice_cols(r.weights, 0, 1));
  for (std::size_t f = 1; f < n_fields; ++f) {
    r.aggregated =
        ops::add(r.aggregated, ops::scale_rows(r.fields[f], ops::slice_cols(r.weights, f, 1)));
  }
  return r;
}

template <typename Real>
RepresentationVars<Real> product_view(RepresentationVars<Real> r, RepresentationMode mode) {
  if (mode == RepresentationMode::BiBert) {
    for (auto& f : r.fields) f = r.cls;
    r.aggregated = r.cls;
  }
  return r;
}

template <typename Real>
Var<Real> query_vectors(const RepresentationVars<Real>& r, RepresentationMode mode) {
  return mode == RepresentationMode::Charm ? r.aggregated : r.cls;
}

template <typename Real>
Tensor<Real> encode(const TokenizedSequence& seq, const AttentionMask& mask,
                    const EncoderWeights<Real>& weights) {
  Tape<Real> tape;
  auto tw = attach(tape, weights, false);
  return encode_packed(tw, weights.config, std::span<const TokenizedSequence>(&seq, 1),
                       std::span<const AttentionMask>(&mask, 1))
      .value();
}

template <typename Real>
RepresentationSet<Real> extract_representations(const Tensor<Real>& hidden,
                                                const TokenizedSequence& seq,
                                                const Tensor<Real>& aggregation) {
  const std::size_t d = hidden.cols(), n_fields = aggregation.cols();
  if (aggregation.rows() != d) throw DimensionError("extract: aggregation rows must equal d");
  if (seq.n_fields() != n_fields) throw DimensionError("extract: field count mismatch");
  RepresentationSet<Real> r;
  r.per_field = Tensor<Real>(n_fields, d);
  for (std::size_t f = 0; f < n_fields; ++f) {
    const auto src = hidden.row(seq.special_pos[f]);
    std::copy(src.begin(), src.end(), r.per_field.row(f).begin());
  }
  const auto cls = hidden.row(seq.cls_pos);
  r.cls.assign(cls.begin(), cls.end());
  std::vector<Real> logits(n_fields, Real(0));
  for (std::size_t c = 0; c < d; ++c) {
    if (r.cls[c] == Real(0)) continue;
    for (std::size_t f = 0; f < n_fields; ++f) logits[f] += r.cls[c] * aggregation(c, f);
  }
  const Real lse = logsumexp<Real>(logits);
  r.weights.resize(n_fields);
  for (std::size_t f = 0; f < n_fields; ++f) r.weights[f] = std::exp(logits[f] - lse);
  r.aggregated.assign(d, Real(0));
  for (std::size_t f = 0; f < n_fields; ++f) {
    for (std::size_t c = 0; c < d; ++c) r.aggregated[c] += r.per_field(f, c) * r.weights[f];
  }
  return r;
}

template <typename Real>
RepresentationSet<Real> BatchRepresentations<Real>::at(std::size_t i) const {
  RepresentationSet<Real> r;
  const std::size_t d = cls.cols();
  r.per_field = Tensor<Real>(fields.size(), d);
  for (std::size_t f = 0; f < fields.size(); ++f) {
    const auto src = fields[f].row(i);
    std::copy(src.begin(), src.end(), r.per_field.row(f).begin());
  }
  const auto c = cls.row(i);
  r.cls.assign(c.begin(), c.end());
  const auto w = weights.row(i);
  r.weights.assign(w.begin(), w.end());
  const auto a = aggregated.row(i);
  r.aggregated.assign(a.begin(), a.end());
  return r;
}

namespace {

template <typename Real>
void copy_rows(const Tensor<Real>& src, Tensor<Real>& dst, std::size_t first) {
  std::copy(src.values().begin(), src.values().end(),
            dst.values().begin() + static_cast<std::ptrdiff_t>(first * dst.cols()));
}

}  // namespace

template <typename Real>
BatchRepresentations<Real> encode_batch(const EncoderWeights<Real>& weights,
                                        std::span<const TokenizedSequence> seqs,
                                        MaskVariant variant, std::size_t chunk) {
  const std::size_t n = seqs.size(), d = weights.config.model_dim, nf = weights.config.n_fields;
  BatchRepresentations<Real> out;
  out.fields.assign(nf, Tensor<Real>(n, d));
  out.cls = Tensor<Real>(n, d);
  out.weights = Tensor<Real>(n, nf);
  out.aggregated = Tensor<Real>(n, d);
  if (chunk == 0) chunk = 1;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    std::vector<TokenizedSequence> part;
    std::vector<AttentionMask> masks;
    for (std::size_t i = begin; i < end; ++i) {
      part.push_back(seqs[i].trimmed());
      masks.push_back(build_mask(part.back(), variant));
    }
    Tape<Real> tape;
    auto tw = attach(tape, weights, false);
    auto hidden = encode_packed(tw, weights.config, std::span<const TokenizedSequence>(part),
                                std::span<const AttentionMask>(masks));
    auto r = extract_packed(hidden, std::span<const TokenizedSequence>(part), tw.aggregation);
    for (std::size_t f = 0; f < nf; ++f) copy_rows(r.fields[f].value(), out.fields[f], begin);
    copy_rows(r.cls.value(), out.cls, begin);
    copy_rows(r.weights.value(), out.weights, begin);
    copy_rows(r.aggregated.value(), out.aggregated, begin);
  }
  return out;
}

Encoder::Encoder(EncoderWeights<float> weights, Vocabulary vocab, FieldSchema schema,
                 MaskVariant variant, RepresentationMode mode, std::size_t product_max_len,
                 std::size_t query_max_len)
    : weights_(std::move(weights)),
      vocab_(std::move(vocab)),
      schema_(std::move(schema)),
      variant_(variant),
      mode_(mode),
      product_max_len_(product_max_len),
      query_max_len_(query_max_len) {
  const auto& c = weights_.config;
  c.validate();
  if (c.vocab_size != vocab_.size()) throw ConfigError("encoder vocab_size differs from the vocabulary");
  if (c.n_fields != schema_.size()) throw ConfigError("encoder n_fields differs from the schema");
  if (c.max_positions < product_max_len_ || c.max_positions < query_max_len_) {
    throw ConfigError("encoder max_positions is shorter than the tokenizer max_len");
  }
}

TokenizedSequence Encoder::tokenize(const ProductRecord& p) const {
  return tokenize_product(p, schema_, vocab_, product_max_len_);
}

TokenizedSequence Encoder::tokenize(const QueryRecord& q) const {
  return tokenize_query(q, schema_, vocab_, query_max_len_);
}

RepresentationSet<float> Encoder::encode_product(const ProductRecord& p) const {
  return encode_products({p}).at(0);
}

RepresentationSet<float> Encoder::encode_query(const QueryRecord& q) const {
  return encode_queries({q}).at(0);
}

BatchRepresentations<float> Encoder::encode_products(
    const std::vector<ProductRecord>& products) const {
  std::vector<TokenizedSequence> seqs;
  seqs.reserve(products.size());
  for (const auto& p : products) seqs.push_back(tokenize(p));
  auto r = encode_batch<float>(weights_, seqs, variant_);
  if (mode_ == RepresentationMode::BiBert) {
    for (auto& f : r.fields) f = r.cls;
    r.aggregated = r.cls;
  }
  return r;
}

BatchRepresentations<float> Encoder::encode_queries(const std::vector<QueryRecord>& queries) const {
  std::vector<TokenizedSequence> seqs;
  seqs.reserve(queries.size());
  for (const auto& q : queries) seqs.push_back(tokenize(q));
  auto r = encode_batch<float>(weights_, seqs, variant_);
  if (mode_ != RepresentationMode::Charm) r.aggregated = r.cls;
  return r;
}

#define CHARM_INSTANTIATE_ENCODER(R)                                                          \
  template struct EncoderWeights<R>;                                                          \
  template struct BatchRepresentations<R>;                                                    \
  template TapeWeights<R> attach(Tape<R>&, const EncoderWeights<R>&, bool);                   \
  template Var<R> encode_packed(const TapeWeights<R>&, const EncoderConfig&,                  \
                                std::span<const TokenizedSequence>,                           \
                                std::span<const AttentionMask>);                              \
  template RepresentationVars<R> extract_packed(Var<R>, std::span<const TokenizedSequence>,   \
                                                Var<R>);                                      \
  template RepresentationVars<R> product_view(RepresentationVars<R>, RepresentationMode);     \
  template Var<R> query_vectors(const RepresentationVars<R>&, RepresentationMode);            \
  template Tensor<R> encode(const TokenizedSequence&, const AttentionMask&,                   \
                            const EncoderWeights<R>&);                                        \
  template RepresentationSet<R> extract_representations(const Tensor<R>&,                     \
                                                        const TokenizedSequence&,             \
                                                        const Tensor<R>&);                    \
  template BatchRepresentations<R> encode_batch(const EncoderWeights<R>&,                     \
                                                std::span<const TokenizedSequence>,           \
                                                MaskVariant, std::size_t);

CHARM_INSTANTIATE_ENCODER(float)
CHARM_INSTANTIATE_ENCODER(double)

#undef CHARM_INSTANTIATE_ENCODER

}  // namespace charm
