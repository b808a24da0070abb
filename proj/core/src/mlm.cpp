#include "charm/mlm.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "charm/error.hpp"
#include "charm/optim.hpp"
#include "charm/rng.hpp"

namespace charm {

void MlmConfig::validate() const {
  if (batch_size == 0) throw ConfigError("mlm: batch_size must be positive");
  if (mask_rate < 0 || mask_rate > 1) throw ConfigError("mlm: mask_rate must be in [0, 1]");
  if (!(lr >= 0)) throw ConfigError("mlm: lr must be non-negative");
  if (!(clip_norm > 0)) throw ConfigError("mlm: clip_norm must be positive");
}

std::string MlmLogRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = loss;
  j["n_masked"] = n_masked;
  j["lr"] = lr;
  return j.dump();
}

namespace {

bool is_content(const TokenizedSequence& seq, std::size_t i, const Vocabulary& vocab) {
  return seq.field_of[i] >= 0 && !vocab.is_reserved(seq.ids[i]) && seq.ids[i] != kSepId;
}

// Logits over the vocabulary for selected rows of the packed hidden states.
Var<float> prediction_logits(Var<float> hidden, const std::vector<std::size_t>& rows,
                             Var<float> token_embedding, Var<float> bias) {
  auto h = ops::select_rows(hidden, std::span<const std::size_t>(rows));
  return ops::add_row(ops::matmul_nt(h, token_embedding), bias);
}

}  // namespace

MlmResult mlm_pretrain(const std::vector<ProductRecord>& products, const FieldSchema& schema,
                       const Vocabulary& vocab, EncoderWeights<float> init,
                       const MlmConfig& config) {
  config.validate();
  init.config.validate();
  MlmResult result;
  result.weights = std::move(init);
  result.output_bias = Tensor<float>(1, result.weights.config.vocab_size);
  if (products.empty() || config.steps == 0) return result;

  std::vector<TokenizedSequence> seqs;
  seqs.reserve(products.size());
  for (const auto& p : products) {
    seqs.push_back(tokenize_product(p, schema, vocab, config.max_len).trimmed());
  }

  auto params = result.weights.parameters();
  params.push_back(&result.output_bias);
  auto adam = AdamState<float>::zeros_like(params);
  Rng rng(config.seed);
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<TokenizedSequence> batch;
    std::vector<AttentionMask> masks;
    std::vector<std::size_t> rows;
    std::vector<std::size_t> targets;
    std::size_t offset = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      auto seq = seqs[order[cursor++]];
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!is_content(seq, i, vocab)) continue;
        if (rng.uniform() >= config.mask_rate) continue;
        targets.push_back(static_cast<std::size_t>(seq.ids[i]));
        rows.push_back(offset + i);
        seq.ids[i] = kMaskId;
      }
      offset += seq.size();
      masks.push_back(build_mask(seq, config.mask_variant));
      batch.push_back(std::move(seq));
    }
    if (rows.empty()) continue;

    Tape<float> tape;
    auto tw = attach(tape, result.weights, true);
    auto bias = tape.leaf(result.output_bias, true);
    auto hidden = encode_packed(tw, result.weights.config, std::span<const TokenizedSequence>(batch),
                                std::span<const AttentionMask>(masks));
    auto logits = prediction_logits(hidden, rows, tw.token_embedding, bias);
    auto loss = ops::mean(ops::sub(ops::logsumexp_rows(logits),
                                   ops::pick(logits, std::span<const std::size_t>(targets))));

    MlmLogRecord rec;
    rec.step = step;
    rec.loss = loss.value()[0];
    rec.n_masked = rows.size();
    rec.lr = linear_warmup_schedule(step, config.steps, config.warmup_ratio, config.lr);
    if (!std::isfinite(rec.loss)) throw Error("mlm: non-finite loss at step " + std::to_string(step));

    tape.backward(loss);
    std::vector<Tensor<float>> grads;
    for (const auto& leaf : tw.leaves) grads.push_back(tape.grad(leaf.id));
    grads.push_back(tape.grad(bias.id));
    clip_global_norm<float>(grads, config.clip_norm);
    adam_step<float>(params, grads, adam, rec.lr);
    result.log.push_back(rec);
  }
  return result;
}

std::vector<TokenId> mlm_predict(const EncoderWeights<float>& weights,
                                 const Tensor<float>& output_bias, const TokenizedSequence& seq,
                                 MaskVariant variant, const std::vector<std::size_t>& positions) {
  Tape<float> tape;
  auto tw = attach(tape, weights, false);
  auto bias = tape.leaf(output_bias, false);
  const auto mask = build_mask(seq, variant);
  auto hidden = encode_packed(tw, weights.config, std::span<const TokenizedSequence>(&seq, 1),
                              std::span<const AttentionMask>(&mask, 1));
  const auto& logits = prediction_logits(hidden, positions, tw.token_embedding, bias).value();
  std::vector<TokenId> out;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    out.push_back(static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

}  // namespace charm
