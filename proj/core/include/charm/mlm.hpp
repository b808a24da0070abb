#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "charm/attention_mask.hpp"
#include "charm/corpus.hpp"
#include "charm/encoder.hpp"

namespace charm {

struct MlmConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double mask_rate = 0.15;
  double warmup_ratio = 0.1;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  MaskVariant mask_variant = MaskVariant::BlockTriangular;
  std::size_t max_len = 128;

  void validate() const;
};

struct MlmLogRecord {
  std::size_t step = 0;
  double loss = 0;
  std::size_t n_masked = 0;
  double lr = 0;

  std::string to_json() const;
};

struct MlmResult {
  EncoderWeights<float> weights;
  /// Output bias of the tied-embedding prediction head; 1 x vocab.
  Tensor<float> output_bias;
  /// Only steps that masked at least one token.
  std::vector<MlmLogRecord> log;
};

/// Masked-token pretraining through the same masked encoder. Every content
/// token is replaced by MASK independently with probability mask_rate; the
/// prediction head reuses the token embedding matrix. A batch without masked
/// tokens performs no update.
MlmResult mlm_pretrain(const std::vector<ProductRecord>& products, const FieldSchema& schema,
                       const Vocabulary& vocab, EncoderWeights<float> init,
                       const MlmConfig& config);

/// Arg-max token prediction at each of `positions` of `seq`.
std::vector<TokenId> mlm_predict(const EncoderWeights<float>& weights,
                                 const Tensor<float>& output_bias, const TokenizedSequence& seq,
                                 MaskVariant variant, const std::vector<std::size_t>& positions);

}  // namespace charm
