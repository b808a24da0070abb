#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "charm/corpus.hpp"
#include "charm/metrics.hpp"
#include "charm/retrieval.hpp"
#include "charm/tensor.hpp"

namespace charm {

struct DiversityStats {
  double mean_euclidean = 0;
  double mean_dot = 0;
  double log_det = 0;
  double epsilon = 0;  ///< ridge added to the covariance diagonal
  std::size_t n_pairs = 0;
};

/// Pairwise statistics over distinct pairs (all of them when M(M-1)/2 <=
/// max_pairs or max_pairs == 0, else max_pairs uniformly sampled pairs) and the
/// log-determinant of the sample covariance (denominator max(M-1, 1)) plus
/// eps I, eps = 1e-6 * mean diagonal (1e-6 when that is 0).
DiversityStats diversity_stats(const Tensor<float>& rows, std::size_t max_pairs = 2'000'000,
                               std::uint64_t seed = 0);

struct DiversityReport {
  DiversityStats aggregated;
  std::vector<DiversityStats> fields;
};

DiversityReport diversity_report(const TwoTierIndex& index, std::size_t max_pairs = 2'000'000,
                                 std::uint64_t seed = 0);

/// Per field, how many of the top-k hits (over all queries) it matched.
std::vector<std::size_t> match_field_histogram(const std::vector<RankedResult>& results,
                                               std::size_t n_fields, std::size_t k = 10);

/// Number of queries whose top-k hits matched exactly n distinct fields.
std::map<std::size_t, std::size_t> fields_per_query_histogram(
    const std::vector<RankedResult>& results, std::size_t k = 10);

/// Mean character length (UTF-8 code points) of the queries whose top hit
/// matched each field; 0 for a field no query matched.
std::vector<double> query_length_by_field(const std::vector<RankedResult>& results,
                                          const std::vector<QueryRecord>& queries,
                                          std::size_t n_fields);

/// Natural-log entropy of the product types in each query's top k, averaged
/// over queries, for every k in ks. Products without a type count as "".
std::vector<double> match_entropy_curve(const std::vector<RankedResult>& results,
                                        const std::map<std::string, std::string>& product_types,
                                        const std::vector<std::size_t>& ks);

/// Fraction of the exhaustive best-field top k that lies in the stage-1
/// shortlist of size s, averaged over queries. Result[i][j] is for
/// shortlist_sizes[i] and ks[j].
std::vector<std::vector<double>> preservation_curve(const TwoTierIndex& index,
                                                    const Tensor<float>& query_vectors,
                                                    const std::vector<std::size_t>& shortlist_sizes,
                                                    const std::vector<std::size_t>& ks);

/// Mean aggregation weight of `field` per product type, from an M x |F|
/// weight matrix with row-aligned types.
std::map<std::string, double> aggregation_weight_by_type(const Tensor<float>& weights,
                                                         const std::vector<std::string>& types,
                                                         std::size_t field);

/// Flat (metric, key, value) rows shared by the table, JSONL and CSV writers.
struct ReportRow {
  std::string metric;
  std::string key;
  double value = 0;
};

void write_table(std::ostream& out, const std::string& title, const std::vector<ReportRow>& rows);
void write_jsonl(std::ostream& out, const std::vector<ReportRow>& rows);
void write_csv(std::ostream& out, const std::vector<ReportRow>& rows);

std::vector<ReportRow> metric_rows(const MetricReport& report);
std::vector<ReportRow> diversity_rows(const DiversityReport& report,
                                      const std::vector<std::string>& field_names);

}  // namespace charm
