#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "charm/encoder.hpp"
#include "charm/tensor.hpp"

namespace charm {

/// best_field value of a hit scored on the aggregated vector.
inline constexpr int kAggregatedField = -1;

struct Hit {
  std::string product_id;
  std::size_t row = 0;
  double score = 0;
  int best_field = kAggregatedField;

  friend bool operator==(const Hit&, const Hit&) = default;
};

/// Scores non-increasing; equal scores ordered by ascending product_id.
using RankedResult = std::vector<Hit>;

/// Corpus matrices for two-stage retrieval. Row r of every matrix belongs to
/// product_ids()[r]. Scores are raw dot products accumulated in double.
class TwoTierIndex {
 public:
  TwoTierIndex() = default;
  /// `weights` (M x |F|) may be empty.
  TwoTierIndex(std::vector<std::string> product_ids, Tensor<float> aggregated,
               std::vector<Tensor<float>> fields, Tensor<float> weights = {});
  TwoTierIndex(const TwoTierIndex& other);
  TwoTierIndex& operator=(const TwoTierIndex& other);

  /// Encodes every product once.
  static TwoTierIndex build(const Encoder& encoder, const std::vector<ProductRecord>& products);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return aggregated_.cols(); }
  std::size_t n_fields() const noexcept { return fields_.size(); }
  const std::vector<std::string>& product_ids() const noexcept { return ids_; }
  std::size_t row_of(const std::string& product_id) const;
  const Tensor<float>& aggregated() const noexcept { return aggregated_; }
  const Tensor<float>& field(std::size_t f) const { return fields_.at(f); }
  const std::vector<Tensor<float>>& fields() const noexcept { return fields_; }
  const Tensor<float>& weights() const noexcept { return weights_; }

  /// Dot products evaluated so far by the search methods.
  std::uint64_t comparisons() const noexcept { return counter_.load(std::memory_order_relaxed); }

  /// Top min(k, M) by aggregated score. Adds M comparisons.
  RankedResult stage1_shortlist(std::span<const float> query, std::size_t k) const;
  /// Best-field rescoring of `shortlist`. Adds |shortlist| * |F| comparisons.
  RankedResult stage2_rerank(std::span<const float> query, const RankedResult& shortlist) const;
  /// Exhaustive best-field search. Adds M * |F| comparisons.
  RankedResult full_field_search(std::span<const float> query, std::size_t k) const;
  /// Stage 1 with k_shortlist, stage 2, cut to k_final <= k_shortlist.
  RankedResult two_stage_search(std::span<const float> query, std::size_t k_shortlist,
                                std::size_t k_final) const;

  /// Header {M, d, |F|, ids} then raw little-endian matrices.
  void save(const std::filesystem::path& path) const;
  static TwoTierIndex load(const std::filesystem::path& path);

  /// Same ids and bit-identical matrices.
  bool same_contents(const TwoTierIndex& other) const;

 private:
  void check_query(std::span<const float> query) const;
  double dot(std::span<const float> query, const Tensor<float>& m, std::size_t row) const;
  RankedResult top_k(std::vector<Hit> hits, std::size_t k) const;

  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> row_;
  Tensor<float> aggregated_;
  std::vector<Tensor<float>> fields_;
  Tensor<float> weights_;
  mutable std::atomic<std::uint64_t> counter_{0};
};

/// Comparisons added between two readings of TwoTierIndex::comparisons().
inline std::uint64_t comparison_budget(std::uint64_t before, std::uint64_t after) {
  return after - before;
}

/// True when a ranks ahead of b.
bool ranks_before(const Hit& a, const Hit& b) noexcept;

/// One {query_id, rank, product_id, score, best_field} line per hit; rank is
/// 1-based and best_field is a field index or "aggregated".
void write_results_jsonl(std::ostream& out, const std::string& query_id, const RankedResult& r);

struct QueryResults {
  std::string query_id;
  RankedResult hits;
};

/// Inverse of write_results_jsonl; rows are left at 0.
std::vector<QueryResults> read_results_jsonl(const std::filesystem::path& path);

}  // namespace charm
