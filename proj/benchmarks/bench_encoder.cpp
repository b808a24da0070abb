#include <benchmark/benchmark.h>

#include "charm/encoder.hpp"
#include "charm/losses.hpp"

namespace {

struct Batch {
  charm::EncoderWeights<float> weights;
  std::vector<charm::TokenizedSequence> seqs;
  std::vector<charm::AttentionMask> masks;
};

// Synthetic token sequences of length `len` with four equal-width fields.
Batch make_batch(std::size_t n, std::size_t len) {
  charm::EncoderConfig cfg;
  cfg.vocab_size = 200;
  cfg.n_fields = 4;
  cfg.max_positions = len;
  Batch b;
  b.weights = charm::EncoderWeights<float>::init(cfg, 3);
  charm::Rng rng(4);
  for (std::size_t i = 0; i < n; ++i) {
    charm::TokenizedSequence s;
    s.ids.push_back(charm::kClsId);
    s.field_of.push_back(charm::kClsSlot);
    for (int f = 0; f < 4; ++f) {
      s.special_pos.push_back(s.ids.size());
      s.ids.push_back(charm::kFirstFieldTokenId + f);
      s.field_of.push_back(f);
    }
    const std::size_t per_field = (len - 5) / 4;
    for (int f = 0; f < 4; ++f) {
      for (std::size_t w = 0; w + 1 < per_field; ++w) {
        s.ids.push_back(static_cast<charm::TokenId>(20 + rng.uniform_index(180)));
        s.field_of.push_back(f);
      }
      s.ids.push_back(charm::kSepId);
      s.field_of.push_back(f);
    }
    s.length = s.ids.size();
    b.masks.push_back(charm::build_mask(s, charm::MaskVariant::BlockTriangular));
    b.seqs.push_back(std::move(s));
  }
  return b;
}

void BM_EncodeBatch(benchmark::State& state) {
  const auto b = make_batch(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        charm::encode_batch<float>(b.weights, b.seqs, charm::MaskVariant::BlockTriangular));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeBatch)->Args({64, 32})->Args({64, 128})->Unit(benchmark::kMillisecond);

void BM_TrainStepForwardBackward(benchmark::State& state) {
  const auto b = make_batch(static_cast<std::size_t>(state.range(0)), 64);
  std::vector<std::size_t> positives(b.seqs.size());
  for (std::size_t i = 0; i < positives.size(); ++i) positives[i] = i;
  for (auto _ : state) {
    charm::Tape<float> tape;
    const auto tw = charm::attach(tape, b.weights, true);
    auto hidden = charm::encode_packed(tw, b.weights.config, std::span<const charm::TokenizedSequence>(b.seqs),
                                       std::span<const charm::AttentionMask>(b.masks));
    const auto reps = charm::extract_packed(hidden, std::span<const charm::TokenizedSequence>(b.seqs), tw.aggregation);
    const auto terms = charm::charm_loss(reps.aggregated, reps, std::span<const std::size_t>(positives),
                                         charm::LossWeights{});
    tape.backward(terms.total);
    benchmark::DoNotOptimize(tape.grad(tw.aggregation.id));
  }
}
BENCHMARK(BM_TrainStepForwardBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
