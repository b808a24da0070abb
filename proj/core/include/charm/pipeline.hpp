#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "charm/analysis.hpp"
#include "charm/corpus.hpp"
#include "charm/encoder.hpp"
#include "charm/metrics.hpp"
#include "charm/mlm.hpp"
#include "charm/retrieval.hpp"
#include "charm/run_config.hpp"
#include "charm/tokenize.hpp"
#include "charm/training.hpp"

namespace charm {

/// A required input file is missing; `producer` is the command that writes it.
class MissingPrerequisite : public Error {
 public:
  MissingPrerequisite(const std::filesystem::path& path, std::string producer)
      : Error("missing '" + path.string() + "'; run `" + producer + "` first"),
        producer_(std::move(producer)) {}
  const std::string& producer() const noexcept { return producer_; }

 private:
  std::string producer_;
};

/// File layout inside a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path products() const { return root / "data" / "products.jsonl"; }
  std::filesystem::path queries() const { return root / "data" / "queries.jsonl"; }
  std::filesystem::path vocab() const { return root / "vocab.tsv"; }
  std::filesystem::path mlm_checkpoint() const { return root / "mlm.ckpt"; }
  std::filesystem::path mlm_log() const { return root / "mlm_log.jsonl"; }
  std::filesystem::path checkpoint() const { return root / "model.ckpt"; }
  std::filesystem::path model_meta() const { return root / "model.json"; }
  std::filesystem::path train_log() const { return root / "train_log.jsonl"; }
  std::filesystem::path index() const { return root / "index.bin"; }
  std::filesystem::path search_results() const { return root / "search_results.jsonl"; }
  std::filesystem::path report(const std::string& stem, const std::string& ext) const {
    return root / (stem + "." + ext);
  }
  std::filesystem::path effective_config(const std::string& command) const {
    return root / (command + ".config.json");
  }
};

/// Corpus in data-file field order plus the train/test query split.
struct Dataset {
  FieldSchema schema;
  Corpus corpus;
  std::vector<QueryRecord> train;
  std::vector<QueryRecord> test;
};

/// Synthesizes the corpus described by the config (no files touched).
Dataset synthesize_dataset(const RunConfig& config);
/// Loads from config.data, or from the run directory written by gen-data.
Dataset load_dataset(const RunConfig& config);
/// Products plus training queries.
Vocabulary build_vocabulary(const Dataset& data, const RunConfig& config);
/// Randomly initialized weights sized for the vocabulary and the schema.
EncoderWeights<float> initial_weights(const RunConfig& config, const Vocabulary& vocab);

/// Everything a trained model needs besides its weights.
struct ModelMeta {
  std::vector<std::string> schema;
  MaskVariant mask_variant = MaskVariant::BlockTriangular;
  RepresentationMode mode = RepresentationMode::Charm;
  std::size_t product_max_len = 128;
  std::size_t query_max_len = 32;

  std::string to_json() const;
  static ModelMeta from_json(const std::string& text);
  static ModelMeta from_config(const RunConfig& config);
};

/// Trained model, its index and test-split evaluation.
struct Experiment {
  TrainResult training;
  Encoder encoder;
  TwoTierIndex index;
  Tensor<float> test_queries;  ///< query vectors, one row per test query
  MetricReport report;
};

/// Trains from `init` (random weights when empty), indexes all products and
/// evaluates the test split.
Experiment run_experiment(const RunConfig& config, const Dataset& data, const Vocabulary& vocab,
                          const std::optional<EncoderWeights<float>>& init);

/// Ablation variants by name: "base" or one AblationFlags name.
RunConfig apply_variant(RunConfig base, const std::string& variant);

/// Subcommands. Human-readable output goes to `out`; files go under
/// config.out_dir, next to `<command>.config.json`.
void cmd_gen_data(const RunConfig& config, std::ostream& out);
void cmd_pretrain(const RunConfig& config, std::ostream& out);
void cmd_train(const RunConfig& config, std::ostream& out);
void cmd_index(const RunConfig& config, std::ostream& out);
/// Queries from `queries_path`, else the test split.
void cmd_search(const RunConfig& config, const std::optional<std::filesystem::path>& queries_path,
                std::ostream& out);
void cmd_eval(const RunConfig& config, std::ostream& out);
void cmd_analyze(const RunConfig& config, std::ostream& out);
/// Runs base plus one variant per active ablation flag (base alone when none
/// is set) and writes the delta table against base.
void cmd_ablate(const RunConfig& config, std::ostream& out);

}  // namespace charm
