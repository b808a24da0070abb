#include "charm/training.hpp"

#include <cmath>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "charm/optim.hpp"
#include "charm/rng.hpp"

namespace charm {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr >= 0)) throw ConfigError("train: lr must be non-negative");
  if (warmup_ratio < 0 || warmup_ratio > 1) throw ConfigError("train: warmup_ratio must be in [0, 1]");
  if (!(clip_norm > 0)) throw ConfigError("train: clip_norm must be positive");
  loss.validate();
}

std::string TrainLogRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["L_Agg"] = l_agg;
  j["L_Fields"] = l_fields;
  j["L_Max"] = l_max;
  j["L_Div"] = l_div;
  j["total"] = total;
  j["lr"] = lr;
  j["grad_norm"] = grad_norm;
  return j.dump();
}

namespace {

struct Prepared {
  TokenizedSequence seq;
  AttentionMask mask;
};

Prepared prepare(TokenizedSequence seq, MaskVariant variant) {
  Prepared p;
  p.seq = seq.trimmed();
  p.mask = build_mask(p.seq, variant);
  return p;
}

}  // namespace

TrainResult train(const std::vector<ProductRecord>& products,
                  const std::vector<QueryRecord>& queries, const FieldSchema& schema,
                  const Vocabulary& vocab, EncoderWeights<float> init, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  init.config.validate();
  if (init.config.n_fields != schema.size()) throw ConfigError("train: weights and schema disagree on |F|");

  std::unordered_map<std::string, std::size_t> product_row;
  for (std::size_t i = 0; i < products.size(); ++i) product_row.emplace(products[i].product_id, i);

  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (!queries[i].exact_ids().empty()) trainable.push_back(i);
  }
  if (config.epochs > 0 && trainable.empty()) {
    throw ConfigError("train: no query has an Exact judgment");
  }

  std::vector<Prepared> product_cache(products.size());
  std::vector<bool> product_ready(products.size(), false);
  std::vector<Prepared> query_cache;
  query_cache.reserve(queries.size());
  for (const auto& q : queries) {
    query_cache.push_back(prepare(tokenize_query(q, schema, vocab, config.query_max_len),
                                  config.mask_variant));
  }
  auto product = [&](std::size_t row) -> const Prepared& {
    if (!product_ready[row]) {
      product_cache[row] = prepare(
          tokenize_product(products[row], schema, vocab, config.product_max_len), config.mask_variant);
      product_ready[row] = true;
    }
    return product_cache[row];
  };

  TrainResult result;
  result.weights = std::move(init);
  auto params = result.weights.parameters();
  auto adam = AdamState<float>::zeros_like(params);
  const std::size_t steps_per_epoch = (trainable.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  Rng rng(config.seed);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto order = trainable;
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);

      std::vector<TokenizedSequence> q_seqs, p_seqs;
      std::vector<AttentionMask> q_masks, p_masks;
      std::vector<std::size_t> positives;
      std::unordered_map<std::size_t, std::size_t> candidate_of_row;
      auto add_candidate = [&](const std::string& id) {
        const auto it = product_row.find(id);
        if (it == product_row.end()) {
          throw ReferentialIntegrityError("train: unknown product '" + id + "'");
        }
        const auto [pos, inserted] = candidate_of_row.emplace(it->second, p_seqs.size());
        if (inserted) {
          const auto& p = product(it->second);
          p_seqs.push_back(p.seq);
          p_masks.push_back(p.mask);
        }
        return pos->second;
      };
      for (std::size_t i = begin; i < end; ++i) {
        const auto qi = order[i];
        const auto pair = sample_training_pair(queries[qi], rng);
        q_seqs.push_back(query_cache[qi].seq);
        q_masks.push_back(query_cache[qi].mask);
        positives.push_back(add_candidate(pair->positive_id));
        if (config.hard_negatives && pair->hard_negative_id) add_candidate(*pair->hard_negative_id);
      }

      Tape<float> tape;
      auto tw = attach(tape, result.weights, true);
      auto q_hidden = encode_packed(tw, result.weights.config,
                                    std::span<const TokenizedSequence>(q_seqs),
                                    std::span<const AttentionMask>(q_masks));
      auto q_reps = extract_packed(q_hidden, std::span<const TokenizedSequence>(q_seqs), tw.aggregation);
      auto p_hidden = encode_packed(tw, result.weights.config,
                                    std::span<const TokenizedSequence>(p_seqs),
                                    std::span<const AttentionMask>(p_masks));
      auto p_reps = product_view(
          extract_packed(p_hidden, std::span<const TokenizedSequence>(p_seqs), tw.aggregation),
          config.mode);
      auto terms = charm_loss(query_vectors(q_reps, config.mode), p_reps,
                              std::span<const std::size_t>(positives), config.loss);

      TrainLogRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.l_agg = terms.agg.value()[0];
      rec.l_fields = terms.fields.value()[0];
      rec.l_max = terms.max.value()[0];
      rec.l_div = terms.div.value()[0];
      rec.total = terms.total.value()[0];
      rec.lr = linear_warmup_schedule(step, total_steps, config.warmup_ratio, config.lr);
      if (!std::isfinite(rec.total)) {
        throw TrainingAborted("train: non-finite loss at step " + std::to_string(step), result.weights);
      }

      tape.backward(terms.total);
      std::vector<Tensor<float>> grads;
      grads.reserve(tw.leaves.size());
      for (const auto& leaf : tw.leaves) grads.push_back(tape.grad(leaf.id));
      rec.grad_norm = clip_global_norm<float>(grads, config.clip_norm);
      try {
        adam_step<float>(params, grads, adam, rec.lr);
      } catch (const NonFiniteGradient& e) {
        throw TrainingAborted(std::string("train: ") + e.what() + " at step " + std::to_string(step),
                              result.weights);
      }
      result.log.push_back(rec);
      ++step;
    }
    if (on_epoch) on_epoch(epoch, result.weights);
  }
  return result;
}

}  // namespace charm
