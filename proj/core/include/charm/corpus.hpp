#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "charm/rng.hpp"

namespace charm {

/// Ordered product fields. Index 0 is the top of the hierarchy; the order is
/// the order in which the block-triangular mask cascades.
class FieldSchema {
 public:
  FieldSchema() = default;
  explicit FieldSchema(std::vector<std::string> names,
                       std::vector<std::string> display_names = {});

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(std::size_t f) const { return names_.at(f); }
  const std::string& display_name(std::size_t f) const;
  std::optional<std::size_t> index_of(std::string_view name) const;

  /// Same field set in a different order; `order` must be a permutation of names().
  FieldSchema reordered(const std::vector<std::string>& order) const;

  /// Field order used by the Shopping Queries adapter.
  static FieldSchema esci_default();

  friend bool operator==(const FieldSchema&, const FieldSchema&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<std::string> display_names_;
};

enum class RelevanceLabel : std::uint8_t { Exact, Substitute, Complement, Irrelevant };

/// Graded gain used by NDCG: E=1.0, S=0.1, C=0.01, I=0.0.
double gain(RelevanceLabel label) noexcept;
char label_code(RelevanceLabel label) noexcept;
/// Parses "E", "S", "C" or "I".
std::optional<RelevanceLabel> parse_label(std::string_view code) noexcept;

struct ProductRecord {
  std::string product_id;
  std::map<std::string, std::string> field_texts;
  std::optional<std::string> product_type;

  /// Text of a schema field; empty when the field is absent.
  const std::string& text(const std::string& field) const;

  friend bool operator==(const ProductRecord&, const ProductRecord&) = default;
};

struct Judgment {
  std::string product_id;
  RelevanceLabel label = RelevanceLabel::Irrelevant;
  friend bool operator==(const Judgment&, const Judgment&) = default;
};

struct QueryRecord {
  std::string query_id;
  std::string text;
  std::vector<Judgment> judgments;

  std::vector<std::string> exact_ids() const;
  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

struct Corpus {
  std::vector<ProductRecord> products;
  std::vector<QueryRecord> queries;
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Checks every record against the schema and the product id table; throws
/// ReferentialIntegrityError / ConfigError on the first violation.
void validate_corpus(const Corpus& corpus, const FieldSchema& schema);

std::vector<ProductRecord> load_products(const std::filesystem::path& path,
                                         const FieldSchema& schema);
std::vector<QueryRecord> load_queries(const std::filesystem::path& path);

/// Loads both files, fills missing fields with "" and checks that every
/// judgment references a known product.
Corpus load_corpus(const std::filesystem::path& products_path,
                   const std::filesystem::path& queries_path, const FieldSchema& schema);

void save_products(const std::filesystem::path& path, const std::vector<ProductRecord>& products,
                   const FieldSchema& schema);
void save_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& queries);

struct SynthesisParams {
  std::uint64_t seed = 1;
  std::size_t n_products = 2000;
  std::size_t n_queries = 300;
  /// Distinct labels per hierarchy level. Empty selects a default by depth.
  std::vector<std::size_t> branching;
  std::size_t filler_vocab = 24;
  std::size_t max_substitutes = 10;
  std::size_t max_irrelevant = 5;
  /// Chance that a query also names each level above its target level.
  double shallow_label_rate = 1.0;

  friend bool operator==(const SynthesisParams&, const SynthesisParams&) = default;
};

/// Products carry a latent label path (one label per field). Field f holds the
/// depth-f label plus filler words; the labels are reused across parents, so a
/// depth-f label only identifies a product prefix together with all shallower
/// fields. A query targets a depth t and names the depth-t label plus a random
/// subset of the shallower ones. It is judged Exact on products agreeing on every
/// named level, Substitute on products agreeing on all named levels but t,
/// Irrelevant otherwise (sampled).
Corpus generate_synthetic_corpus(const SynthesisParams& params, const FieldSchema& schema);

/// Products whose field texts contain every query word. Pure string matching.
std::vector<std::string> brute_force_exact_set(const QueryRecord& query,
                                               const std::vector<ProductRecord>& products,
                                               const FieldSchema& schema);

struct TrainingPair {
  std::string query_id;
  std::string positive_id;
  std::optional<std::string> hard_negative_id;
};

/// Positive uniformly among Exact judgments, hard negative uniformly among the
/// rest. nullopt when the query has no Exact judgment (drop it from the epoch).
std::optional<TrainingPair> sample_training_pair(const QueryRecord& query, Rng& rng);

/// Splits deterministically: the last `n_test` queries form the test split.
std::pair<std::vector<QueryRecord>, std::vector<QueryRecord>> split_queries(
    const std::vector<QueryRecord>& queries, std::size_t n_test);

}  // namespace charm
