#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "charm/attention_mask.hpp"
#include "charm/corpus.hpp"
#include "charm/encoder.hpp"
#include "charm/losses.hpp"
#include "charm/mlm.hpp"
#include "charm/training.hpp"

namespace charm {

struct AblationFlags {
  bool diagonal_attention = false;
  bool full_attention = false;
  bool add_div_loss = false;
  bool zero_lambda_agg = false;
  bool zero_lambda_fields = false;
  bool zero_lambda_max = false;
  bool asym_encoders = false;
  bool alt_field_order = false;
  bool skip_mlm = false;
  bool bibert = false;

  /// Names of the set flags, in declaration order.
  std::vector<std::string> active() const;
  /// Sets a flag by name; throws ConfigError for an unknown name.
  void set(const std::string& name, bool value = true);
  static const std::vector<std::string>& names();

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct DataPaths {
  std::string products;
  std::string queries;
  friend bool operator==(const DataPaths&, const DataPaths&) = default;
};

struct TrainParams {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double warmup_ratio = 0.1;
  double clip_norm = 1.0;
  std::size_t product_max_len = 128;
  std::size_t query_max_len = 32;
  bool hard_negatives = true;
  friend bool operator==(const TrainParams&, const TrainParams&) = default;
};

struct MlmParams {
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double mask_rate = 0.15;
  friend bool operator==(const MlmParams&, const MlmParams&) = default;
};

struct AnalysisParams {
  std::vector<std::size_t> shortlist_sizes = {10, 20, 50, 100, 200, 500};
  std::vector<std::size_t> preservation_ks = {1, 5, 10, 50};
  std::vector<std::size_t> entropy_ks = {1, 5, 10, 20, 50, 100};
  std::size_t histogram_k = 10;
  std::size_t diversity_max_pairs = 2'000'000;
  friend bool operator==(const AnalysisParams&, const AnalysisParams&) = default;
};

/// Everything one pipeline run needs. Serialized as a single JSON document;
/// unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "charm_run";
  std::vector<std::string> schema = {"category", "brand", "title", "description"};
  /// Exactly one of data / synthesis is set.
  std::optional<DataPaths> data;
  std::optional<SynthesisParams> synthesis = SynthesisParams{};
  std::size_t n_test_queries = 100;
  /// vocab_size and n_fields are derived from the data and not serialized.
  EncoderConfig encoder;
  LossWeights loss;
  TrainParams train;
  MlmParams mlm;
  MaskVariant mask_variant = MaskVariant::BlockTriangular;
  AblationFlags ablation;
  /// Field order for alt_field_order; empty means reversed.
  std::vector<std::string> alt_field_order;
  std::size_t k_shortlist = 100;
  std::size_t k_final = 100;
  AnalysisParams analysis;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Field order of the data files.
  FieldSchema data_schema() const;
  /// Field order seen by the model (alt_field_order applied).
  FieldSchema model_schema() const;
  MaskVariant effective_mask() const;
  RepresentationMode effective_mode() const;
  LossWeights effective_loss() const;
  TrainConfig train_config() const;
  MlmConfig mlm_config() const;
  /// Synthesis parameters with the run seed applied.
  SynthesisParams synthesis_params() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Diversity weight used by add_div_loss when loss.lambda_div is 0.
inline constexpr double kDefaultDivWeight = 0.01;

}  // namespace charm
