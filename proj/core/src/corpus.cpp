#include "charm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "charm/error.hpp"

namespace charm {

using nlohmann::json;

FieldSchema::FieldSchema(std::vector<std::string> names, std::vector<std::string> display_names)
    : names_(std::move(names)), display_names_(std::move(display_names)) {
  if (names_.empty()) throw ConfigError("field schema must name at least one field");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("field names must be non-empty");
    if (!seen.insert(n).second) throw ConfigError("duplicate field name '" + n + "'");
  }
  if (!display_names_.empty() && display_names_.size() != names_.size()) {
    throw ConfigError("display_names must match the number of fields");
  }
}

const std::string& FieldSchema::display_name(std::size_t f) const {
  return display_names_.empty() ? names_.at(f) : display_names_.at(f);
}

std::optional<std::size_t> FieldSchema::index_of(std::string_view name) const {
  for (std::size_t f = 0; f < names_.size(); ++f) {
    if (names_[f] == name) return f;
  }
  return std::nullopt;
}

FieldSchema FieldSchema::reordered(const std::vector<std::string>& order) const {
  if (order.size() != names_.size()) {
    throw ConfigError("field order must list every schema field exactly once");
  }
  std::vector<std::string> display;
  for (const auto& n : order) {
    const auto f = index_of(n);
    if (!f) throw ConfigError("field order names unknown field '" + n + "'");
    if (!display_names_.empty()) display.push_back(display_names_[*f]);
  }
  return FieldSchema(order, std::move(display));
}

FieldSchema FieldSchema::esci_default() {
  return FieldSchema({"color", "brand", "title", "bullet_points", "description"},
                     {"Color", "Brand", "Title", "Bullet Points", "Description"});
}

double gain(RelevanceLabel label) noexcept {
  switch (label) {
    case RelevanceLabel::Exact: return 1.0;
    case RelevanceLabel::Substitute: return 0.1;
    case RelevanceLabel::Complement: return 0.01;
    case RelevanceLabel::Irrelevant: return 0.0;
  }
  return 0.0;
}

char label_code(RelevanceLabel label) noexcept {
  switch (label) {
    case RelevanceLabel::Exact: return 'E';
    case RelevanceLabel::Substitute: return 'S';
    case RelevanceLabel::Complement: return 'C';
    case RelevanceLabel::Irrelevant: return 'I';
  }
  return 'I';
}

std::optional<RelevanceLabel> parse_label(std::string_view code) noexcept {
  if (code == "E") return RelevanceLabel::Exact;
  if (code == "S") return RelevanceLabel::Substitute;
  if (code == "C") return RelevanceLabel::Complement;
  if (code == "I") return RelevanceLabel::Irrelevant;
  return std::nullopt;
}

const std::string& ProductRecord::text(const std::string& field) const {
  static const std::string empty;
  const auto it = field_texts.find(field);
  return it == field_texts.end() ? empty : it->second;
}

std::vector<std::string> QueryRecord::exact_ids() const {
  std::vector<std::string> out;
  for (const auto& j : judgments) {
    if (j.label == RelevanceLabel::Exact) out.push_back(j.product_id);
  }
  return out;
}

void validate_corpus(const Corpus& corpus, const FieldSchema& schema) {
  std::unordered_set<std::string> ids;
  for (const auto& p : corpus.products) {
    if (!ids.insert(p.product_id).second) {
      throw ReferentialIntegrityError("duplicate product id '" + p.product_id + "'");
    }
    for (const auto& [name, text] : p.field_texts) {
      if (!schema.index_of(name)) {
        throw ConfigError("product '" + p.product_id + "' has field '" + name +
                          "' outside the schema");
      }
    }
  }
  for (const auto& q : corpus.queries) {
    std::unordered_set<std::string> judged;
    for (const auto& j : q.judgments) {
      if (!ids.contains(j.product_id)) {
        throw ReferentialIntegrityError("query '" + q.query_id + "' judges unknown product '" +
                                        j.product_id + "'");
      }
      if (!judged.insert(j.product_id).second) {
        throw ReferentialIntegrityError("query '" + q.query_id + "' judges product '" +
                                        j.product_id + "' twice");
      }
    }
  }
}

namespace {

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t lineno) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw ParseError(path.string(), lineno, "record is not an object");
    return j;
  } catch (const json::exception& e) {
    throw ParseError(path.string(), lineno, e.what());
  }
}

const json& require(const json& j, const char* key, const std::filesystem::path& path,
                    std::size_t lineno) {
  const auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(path.string(), lineno, std::string("missing key '") + key + "'");
  }
  return *it;
}

std::string require_string(const json& j, const char* key, const std::filesystem::path& path,
                           std::size_t lineno) {
  const json& v = require(j, key, path, lineno);
  if (!v.is_string()) {
    throw ParseError(path.string(), lineno, std::string("key '") + key + "' must be a string");
  }
  return v.get<std::string>();
}

}  // namespace

std::vector<ProductRecord> load_products(const std::filesystem::path& path,
                                         const FieldSchema& schema) {
  auto in = open_for_read(path);
  std::vector<ProductRecord> products;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, path, lineno);
    ProductRecord p;
    p.product_id = require_string(j, "product_id", path, lineno);
    const json& fields = require(j, "fields", path, lineno);
    if (!fields.is_object()) throw ParseError(path.string(), lineno, "'fields' must be an object");
    for (const auto& name : schema.names()) p.field_texts[name] = "";
    for (auto it = fields.begin(); it != fields.end(); ++it) {
      if (!it.value().is_string()) {
        throw ParseError(path.string(), lineno, "field '" + it.key() + "' must be a string");
      }
      if (!schema.index_of(it.key())) {
        throw ParseError(path.string(), lineno, "field '" + it.key() + "' is not in the schema");
      }
      p.field_texts[it.key()] = it.value().get<std::string>();
    }
    if (const auto t = j.find("product_type"); t != j.end() && !t->is_null()) {
      if (!t->is_string()) throw ParseError(path.string(), lineno, "'product_type' must be a string");
      p.product_type = t->get<std::string>();
    }
    products.push_back(std::move(p));
  }
  return products;
}

std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  std::vector<QueryRecord> queries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, path, lineno);
    QueryRecord q;
    q.query_id = require_string(j, "query_id", path, lineno);
    q.text = require_string(j, "text", path, lineno);
    const json& judgments = require(j, "judgments", path, lineno);
    if (!judgments.is_array()) throw ParseError(path.string(), lineno, "'judgments' must be a list");
    for (const auto& jj : judgments) {
      if (!jj.is_object()) throw ParseError(path.string(), lineno, "judgment must be an object");
      Judgment judgment;
      judgment.product_id = require_string(jj, "product_id", path, lineno);
      const auto label = parse_label(require_string(jj, "label", path, lineno));
      if (!label) throw ParseError(path.string(), lineno, "label must be one of E, S, C, I");
      judgment.label = *label;
      q.judgments.push_back(std::move(judgment));
    }
    queries.push_back(std::move(q));
  }
  return queries;
}

Corpus load_corpus(const std::filesystem::path& products_path,
                   const std::filesystem::path& queries_path, const FieldSchema& schema) {
  Corpus corpus;
  corpus.products = load_products(products_path, schema);
  corpus.queries = load_queries(queries_path);
  validate_corpus(corpus, schema);
  return corpus;
}

void save_products(const std::filesystem::path& path, const std::vector<ProductRecord>& products,
                   const FieldSchema& schema) {
  auto out = open_for_write(path);
  for (const auto& p : products) {
    json fields = json::object();
    for (const auto& name : schema.names()) fields[name] = p.text(name);
    json j = {{"product_id", p.product_id}, {"fields", std::move(fields)}};
    if (p.product_type) j["product_type"] = *p.product_type;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void save_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& queries) {
  auto out = open_for_write(path);
  for (const auto& q : queries) {
    json judgments = json::array();
    for (const auto& jj : q.judgments) {
      judgments.push_back({{"product_id", jj.product_id},
                           {"label", std::string(1, label_code(jj.label))}});
    }
    out << json{{"query_id", q.query_id}, {"text", q.text}, {"judgments", std::move(judgments)}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::optional<TrainingPair> sample_training_pair(const QueryRecord& query, Rng& rng) {
  std::vector<const Judgment*> exact;
  std::vector<const Judgment*> other;
  for (const auto& j : query.judgments) {
    (j.label == RelevanceLabel::Exact ? exact : other).push_back(&j);
  }
  if (exact.empty()) return std::nullopt;
  TrainingPair pair;
  pair.query_id = query.query_id;
  pair.positive_id = exact[rng.uniform_index(exact.size())]->product_id;
  if (!other.empty()) pair.hard_negative_id = other[rng.uniform_index(other.size())]->product_id;
  return pair;
}

std::pair<std::vector<QueryRecord>, std::vector<QueryRecord>> split_queries(
    const std::vector<QueryRecord>& queries, std::size_t n_test) {
  if (n_test > queries.size()) throw ConfigError("test split larger than the query set");
  const auto cut = queries.begin() + static_cast<std::ptrdiff_t>(queries.size() - n_test);
  return {std::vector<QueryRecord>(queries.begin(), cut),
          std::vector<QueryRecord>(cut, queries.end())};
}

}  // namespace charm
