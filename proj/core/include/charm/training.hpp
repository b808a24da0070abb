#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "charm/attention_mask.hpp"
#include "charm/corpus.hpp"
#include "charm/encoder.hpp"
#include "charm/error.hpp"
#include "charm/losses.hpp"
#include "charm/tokenize.hpp"

namespace charm {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double warmup_ratio = 0.1;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  MaskVariant mask_variant = MaskVariant::BlockTriangular;
  RepresentationMode mode = RepresentationMode::Charm;
  LossWeights loss;
  std::size_t product_max_len = 128;
  std::size_t query_max_len = 32;
  bool hard_negatives = true;

  void validate() const;
};

struct TrainLogRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_agg = 0;
  double l_fields = 0;
  double l_max = 0;
  double l_div = 0;
  double total = 0;
  double lr = 0;
  double grad_norm = 0;

  std::string to_json() const;
};

/// Carries the weights from before the step that went non-finite.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, EncoderWeights<float> last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const EncoderWeights<float>& last_good() const noexcept { return last_good_; }

 private:
  EncoderWeights<float> last_good_;
};

struct TrainResult {
  EncoderWeights<float> weights;
  std::vector<TrainLogRecord> log;
};

/// Called after every epoch with the 1-based epoch number.
using EpochCallback = std::function<void(std::size_t, const EncoderWeights<float>&)>;

/// Contrastive training over `queries` (the training split). Each step draws
/// one (positive, hard negative) pair per query; the candidate pool is every
/// distinct product drawn in the batch. Single-threaded and deterministic.
TrainResult train(const std::vector<ProductRecord>& products,
                  const std::vector<QueryRecord>& queries, const FieldSchema& schema,
                  const Vocabulary& vocab, EncoderWeights<float> init, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace charm
