#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "charm/corpus.hpp"

namespace charm {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kFirstFieldTokenId = 5;

/// Word-level vocabulary. Ids: PAD, UNK, CLS, SEP, MASK, FLD_0..FLD_{F-1},
/// then corpus words by descending count (ties lexicographic).
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(const std::vector<ProductRecord>& products,
                          const std::vector<QueryRecord>& queries, const FieldSchema& schema,
                          std::size_t min_count = 1);
  /// Reserved and field tokens only.
  static Vocabulary reserved_only(std::size_t n_fields);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t n_fields() const noexcept { return n_fields_; }
  TokenId field_token(std::size_t f) const;
  bool is_reserved(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < kFirstFieldTokenId + n_fields_;
  }

  /// `token<TAB>id` per line, reserved ids first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.n_fields_ == b.n_fields_ && a.tokens_ == b.tokens_;
  }

 private:
  void append(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t n_fields_ = 0;
};

/// Lowercased whitespace split.
std::vector<std::string> split_words(std::string_view text);

/// field_of value of the CLS position.
inline constexpr int kClsSlot = -1;
/// field_of value of padding positions.
inline constexpr int kPadSlot = -2;

/// Layout: [CLS][FLD_0..FLD_{F-1}][field_0][SEP]...[field_{F-1}][SEP][PAD...].
/// FLD_f and the SEP that terminates field f both carry field_of = f.
struct TokenizedSequence {
  std::vector<TokenId> ids;
  std::vector<int> field_of;
  std::vector<std::size_t> special_pos;
  std::size_t cls_pos = 0;
  std::size_t length = 0;  ///< non-PAD positions

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t n_fields() const noexcept { return special_pos.size(); }
  /// Copy without the trailing PAD positions.
  TokenizedSequence trimmed() const;

  friend bool operator==(const TokenizedSequence&, const TokenizedSequence&) = default;
};

inline constexpr std::size_t kDefaultProductMaxLen = 400;
inline constexpr std::size_t kDefaultQueryMaxLen = 64;

/// Truncation drops trailing content (deepest field first) and never removes
/// CLS, FLD tokens, or the SEP of a field with surviving content. Empty fields
/// keep their FLD token and emit no SEP.
TokenizedSequence tokenize_product(const ProductRecord& product, const FieldSchema& schema,
                                   const Vocabulary& vocab,
                                   std::size_t max_len = kDefaultProductMaxLen);

/// [CLS][FLD_0..FLD_{F-1}][query words][SEP][PAD...]. Query words and their SEP
/// are assigned to field 0, so every query FLD token can attend the whole text
/// under the block-triangular rule.
TokenizedSequence tokenize_query(const QueryRecord& query, const FieldSchema& schema,
                                 const Vocabulary& vocab,
                                 std::size_t max_len = kDefaultQueryMaxLen);

/// Field that query content is assigned to.
inline constexpr int kQueryContentField = 0;

}  // namespace charm
