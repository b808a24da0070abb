#include "charm/tokenize.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "charm/error.hpp"

namespace charm {
namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return r;
}

std::string field_token_text(std::size_t f) { return "[FLD_" + std::to_string(f) + "]"; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

void Vocabulary::append(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!index_.emplace(token, id).second) {
    throw ConfigError("duplicate vocabulary token '" + token + "'");
  }
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::reserved_only(std::size_t n_fields) {
  Vocabulary v;
  for (const auto& t : reserved_tokens()) v.append(t);
  for (std::size_t f = 0; f < n_fields; ++f) v.append(field_token_text(f));
  v.n_fields_ = n_fields;
  return v;
}

Vocabulary Vocabulary::build(const std::vector<ProductRecord>& products,
                             const std::vector<QueryRecord>& queries, const FieldSchema& schema,
                             std::size_t min_count) {
  Vocabulary v = reserved_only(schema.size());
  std::map<std::string, std::size_t> counts;
  for (const auto& p : products) {
    for (const auto& name : schema.names()) {
      for (auto& w : split_words(p.text(name))) ++counts[std::move(w)];
    }
  }
  for (const auto& q : queries) {
    for (auto& w : split_words(q.text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts) {
    if (c >= std::max<std::size_t>(min_count, 1) && !v.index_.contains(w)) kept.emplace_back(w, c);
  }
  // std::map iteration is lexicographic, so a stable sort by count keeps ties ordered.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [w, c] : kept) v.append(std::move(w));
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

TokenId Vocabulary::field_token(std::size_t f) const {
  if (f >= n_fields_) throw ConfigError("field index out of range for vocabulary");
  return static_cast<TokenId>(kFirstFieldTokenId + f);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), lineno, "expected token<TAB>id");
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "bad id");
    }
    if (id != v.tokens_.size()) throw ParseError(path.string(), lineno, "ids must be dense and ordered");
    v.append(line.substr(0, tab));
  }
  const auto& reserved = reserved_tokens();
  if (v.tokens_.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), v.tokens_.begin())) {
    throw ParseError(path.string(), 0, "vocabulary does not start with the reserved tokens");
  }
  while (kFirstFieldTokenId + v.n_fields_ < v.tokens_.size() &&
         v.tokens_[kFirstFieldTokenId + v.n_fields_] == field_token_text(v.n_fields_)) {
    ++v.n_fields_;
  }
  return v;
}

TokenizedSequence TokenizedSequence::trimmed() const {
  TokenizedSequence out = *this;
  out.ids.resize(length);
  out.field_of.resize(length);
  return out;
}

namespace {

TokenizedSequence start_sequence(std::size_t n_fields, const Vocabulary& vocab,
                                 std::size_t max_len) {
  if (vocab.n_fields() != n_fields) {
    throw ConfigError("vocabulary was built for a different number of fields");
  }
  if (max_len < 1 + n_fields) {
    throw ConfigError("max_len " + std::to_string(max_len) + " cannot hold CLS and " +
                      std::to_string(n_fields) + " field tokens");
  }
  TokenizedSequence seq;
  seq.ids.reserve(max_len);
  seq.field_of.reserve(max_len);
  seq.ids.push_back(kClsId);
  seq.field_of.push_back(kClsSlot);
  seq.cls_pos = 0;
  for (std::size_t f = 0; f < n_fields; ++f) {
    seq.special_pos.push_back(seq.ids.size());
    seq.ids.push_back(vocab.field_token(f));
    seq.field_of.push_back(static_cast<int>(f));
  }
  return seq;
}

void finish_sequence(TokenizedSequence& seq, std::size_t max_len) {
  seq.length = seq.ids.size();
  seq.ids.resize(max_len, kPadId);
  seq.field_of.resize(max_len, kPadSlot);
}

}  // namespace

TokenizedSequence tokenize_product(const ProductRecord& product, const FieldSchema& schema,
                                   const Vocabulary& vocab, std::size_t max_len) {
  auto seq = start_sequence(schema.size(), vocab, max_len);
  std::size_t budget = max_len - seq.ids.size();
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const auto words = split_words(product.text(schema.name(f)));
    if (words.empty()) continue;
    // A field needs room for at least one word plus its SEP.
    if (budget < 2) break;
    const std::size_t take = std::min(words.size(), budget - 1);
    for (std::size_t i = 0; i < take; ++i) {
      seq.ids.push_back(vocab.id(words[i]));
      seq.field_of.push_back(static_cast<int>(f));
    }
    seq.ids.push_back(kSepId);
    seq.field_of.push_back(static_cast<int>(f));
    budget -= take + 1;
  }
  finish_sequence(seq, max_len);
  return seq;
}

TokenizedSequence tokenize_query(const QueryRecord& query, const FieldSchema& schema,
                                 const Vocabulary& vocab, std::size_t max_len) {
  auto seq = start_sequence(schema.size(), vocab, max_len);
  std::size_t budget = max_len - seq.ids.size();
  if (budget >= 1) {
    const auto words = split_words(query.text);
    const std::size_t take = std::min(words.size(), budget - 1);
    for (std::size_t i = 0; i < take; ++i) {
      seq.ids.push_back(vocab.id(words[i]));
      seq.field_of.push_back(kQueryContentField);
    }
    seq.ids.push_back(kSepId);
    seq.field_of.push_back(kQueryContentField);
  }
  finish_sequence(seq, max_len);
  return seq;
}

}  // namespace charm
