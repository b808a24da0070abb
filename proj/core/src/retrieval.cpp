#include "charm/retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <queue>

#include <nlohmann/json.hpp>

#include "charm/checkpoint.hpp"
#include "charm/error.hpp"

namespace charm {

bool ranks_before(const Hit& a, const Hit& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  return a.product_id < b.product_id;
}

TwoTierIndex::TwoTierIndex(std::vector<std::string> product_ids, Tensor<float> aggregated,
                           std::vector<Tensor<float>> fields, Tensor<float> weights)
    : ids_(std::move(product_ids)),
      aggregated_(std::move(aggregated)),
      fields_(std::move(fields)),
      weights_(std::move(weights)) {
  if (ids_.empty()) throw ConfigError("index: empty corpus");
  if (fields_.empty()) throw DimensionError("index: no field matrices");
  const std::size_t m = ids_.size();
  if (aggregated_.rows() != m) throw DimensionError("index: aggregated rows differ from id count");
  for (const auto& f : fields_) {
    if (!f.same_shape(aggregated_)) throw DimensionError("index: field matrix shape mismatch");
  }
  if (weights_.numel() != 0 && (weights_.rows() != m || weights_.cols() != fields_.size())) {
    throw DimensionError("index: weight matrix must be M x |F|");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (!row_.emplace(ids_[i], i).second) throw ConfigError("index: duplicate product id " + ids_[i]);
  }
}

TwoTierIndex::TwoTierIndex(const TwoTierIndex& other)
    : ids_(other.ids_),
      row_(other.row_),
      aggregated_(other.aggregated_),
      fields_(other.fields_),
      weights_(other.weights_),
      counter_(other.comparisons()) {}

TwoTierIndex& TwoTierIndex::operator=(const TwoTierIndex& other) {
  if (this != &other) {
    ids_ = other.ids_;
    row_ = other.row_;
    aggregated_ = other.aggregated_;
    fields_ = other.fields_;
    weights_ = other.weights_;
    counter_.store(other.comparisons());
  }
  return *this;
}

TwoTierIndex TwoTierIndex::build(const Encoder& encoder, const std::vector<ProductRecord>& products) {
  if (products.empty()) throw ConfigError("index: empty corpus");
  auto reps = encoder.encode_products(products);
  std::vector<std::string> ids;
  ids.reserve(products.size());
  for (const auto& p : products) ids.push_back(p.product_id);
  return TwoTierIndex(std::move(ids), std::move(reps.aggregated), std::move(reps.fields),
                      std::move(reps.weights));
}

std::size_t TwoTierIndex::row_of(const std::string& product_id) const {
  const auto it = row_.find(product_id);
  if (it == row_.end()) throw ReferentialIntegrityError("index: unknown product id " + product_id);
  return it->second;
}

void TwoTierIndex::check_query(std::span<const float> query) const {
  if (query.size() != dim()) throw DimensionError("search: query dimension differs from the index");
}

double TwoTierIndex::dot(std::span<const float> query, const Tensor<float>& m, std::size_t row) const {
  const float* r = m.data() + row * m.cols();
  double s = 0;
  for (std::size_t c = 0; c < query.size(); ++c) {
    s += static_cast<double>(query[c]) * static_cast<double>(r[c]);
  }
  return s;
}

RankedResult TwoTierIndex::top_k(std::vector<Hit> hits, std::size_t k) const {
  // Bounded heap whose top is the worst kept hit.
  auto cmp = [](const Hit& a, const Hit& b) { return ranks_before(a, b); };
  std::priority_queue<Hit, std::vector<Hit>, decltype(cmp)> heap(cmp);
  for (auto& h : hits) {
    if (heap.size() < k) {
      heap.push(std::move(h));
    } else if (k > 0 && ranks_before(h, heap.top())) {
      heap.pop();
      heap.push(std::move(h));
    }
  }
  RankedResult out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

RankedResult TwoTierIndex::stage1_shortlist(std::span<const float> query, std::size_t k) const {
  if (k == 0) throw ConfigError("search: k must be at least 1");
  check_query(query);
  std::vector<Hit> hits(size());
  for (std::size_t r = 0; r < size(); ++r) {
    hits[r] = Hit{ids_[r], r, dot(query, aggregated_, r), kAggregatedField};
  }
  counter_.fetch_add(size(), std::memory_order_relaxed);
  return top_k(std::move(hits), k);
}

RankedResult TwoTierIndex::stage2_rerank(std::span<const float> query,
                                         const RankedResult& shortlist) const {
  check_query(query);
  RankedResult out;
  out.reserve(shortlist.size());
  for (const auto& s : shortlist) {
    const std::size_t r = row_of(s.product_id);
    Hit h{ids_[r], r, dot(query, fields_[0], r), 0};
    for (std::size_t f = 1; f < fields_.size(); ++f) {
      const double v = dot(query, fields_[f], r);
      if (v > h.score) {
        h.score = v;
        h.best_field = static_cast<int>(f);
      }
    }
    out.push_back(std::move(h));
  }
  counter_.fetch_add(shortlist.size() * fields_.size(), std::memory_order_relaxed);
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

RankedResult TwoTierIndex::full_field_search(std::span<const float> query, std::size_t k) const {
  if (k == 0) throw ConfigError("search: k must be at least 1");
  check_query(query);
  std::vector<Hit> hits(size());
  for (std::size_t r = 0; r < size(); ++r) {
    Hit h{ids_[r], r, dot(query, fields_[0], r), 0};
    for (std::size_t f = 1; f < fields_.size(); ++f) {
      const double v = dot(query, fields_[f], r);
      if (v > h.score) {
        h.score = v;
        h.best_field = static_cast<int>(f);
      }
    }
    hits[r] = std::move(h);
  }
  counter_.fetch_add(size() * fields_.size(), std::memory_order_relaxed);
  return top_k(std::move(hits), k);
}

RankedResult TwoTierIndex::two_stage_search(std::span<const float> query, std::size_t k_shortlist,
                                            std::size_t k_final) const {
  if (k_final == 0) throw ConfigError("search: k_final must be at least 1");
  if (k_final > k_shortlist) throw ConfigError("search: k_final must not exceed k_shortlist");
  auto r = stage2_rerank(query, stage1_shortlist(query, k_shortlist));
  if (r.size() > k_final) r.resize(k_final);
  return r;
}

namespace {
constexpr char kIndexMagic[8] = {'C', 'H', 'A', 'R', 'M', 'I', 'D', 'X'};
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

void TwoTierIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kIndexMagic, sizeof kIndexMagic);
  binary::write_u32(out, kIndexVersion);
  binary::write_u64(out, size());
  binary::write_u64(out, dim());
  binary::write_u64(out, n_fields());
  binary::write_u32(out, weights_.numel() != 0 ? 1 : 0);
  for (const auto& id : ids_) binary::write_string(out, id);
  binary::write_values(out, aggregated_.data(), aggregated_.numel());
  for (const auto& f : fields_) binary::write_values(out, f.data(), f.numel());
  if (weights_.numel() != 0) binary::write_values(out, weights_.data(), weights_.numel());
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

TwoTierIndex TwoTierIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kIndexMagic, sizeof kIndexMagic) != 0) {
    throw IoError("'" + path.string() + "' is not an index snapshot");
  }
  if (binary::read_u32(in) != kIndexVersion) throw IoError("unsupported index snapshot version");
  const auto m = binary::read_u64(in);
  const auto d = binary::read_u64(in);
  const auto nf = binary::read_u64(in);
  const bool has_weights = binary::read_u32(in) != 0;
  if (m == 0 || d == 0 || nf == 0 || m > (1u << 28) || d > (1u << 16) || nf > 1024) {
    throw IoError("corrupt index snapshot header");
  }
  std::vector<std::string> ids(m);
  for (auto& id : ids) id = binary::read_string(in);
  Tensor<float> agg(m, d);
  binary::read_values(in, agg.data(), agg.numel());
  std::vector<Tensor<float>> fields(nf, Tensor<float>(m, d));
  for (auto& f : fields) binary::read_values(in, f.data(), f.numel());
  Tensor<float> weights;
  if (has_weights) {
    weights = Tensor<float>(m, nf);
    binary::read_values(in, weights.data(), weights.numel());
  }
  return TwoTierIndex(std::move(ids), std::move(agg), std::move(fields), std::move(weights));
}

bool TwoTierIndex::same_contents(const TwoTierIndex& other) const {
  return ids_ == other.ids_ && aggregated_ == other.aggregated_ && fields_ == other.fields_ &&
         weights_ == other.weights_;
}

void write_results_jsonl(std::ostream& out, const std::string& query_id, const RankedResult& r) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    nlohmann::ordered_json j;
    j["query_id"] = query_id;
    j["rank"] = i + 1;
    j["product_id"] = r[i].product_id;
    j["score"] = r[i].score;
    if (r[i].best_field == kAggregatedField) {
      j["best_field"] = "aggregated";
    } else {
      j["best_field"] = r[i].best_field;
    }
    out << j.dump() << '\n';
  }
}

std::vector<QueryResults> read_results_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<QueryResults> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto qid = j.at("query_id").get<std::string>();
      if (out.empty() || out.back().query_id != qid) out.push_back({qid, {}});
      Hit h;
      h.product_id = j.at("product_id").get<std::string>();
      h.score = j.at("score").get<double>();
      const auto& bf = j.at("best_field");
      h.best_field = bf.is_string() ? kAggregatedField : bf.get<int>();
      out.back().hits.push_back(std::move(h));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace charm
