#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "charm/tokenize.hpp"

namespace charm {

enum class MaskVariant : std::uint8_t {
  BlockTriangular,  ///< row field >= column field
  BlockDiagonal,    ///< row field == column field
  Full,             ///< every non-PAD pair
};

std::string_view to_string(MaskVariant v) noexcept;
MaskVariant parse_mask_variant(std::string_view name);

/// Row-major L x L allow matrix: allows(row, col) means token `row` may attend
/// token `col`.
///
/// Rules shared by all variants: PAD rows allow only themselves, PAD columns are
/// closed to every other row, the CLS row sees every non-PAD token, and the CLS
/// column is closed to every row but CLS itself. FLD_f and the SEP terminating
/// field f count as members of field f.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t size, MaskVariant variant)
      : size_(size), variant_(variant), allow_(size * size, 0) {}

  std::size_t size() const noexcept { return size_; }
  MaskVariant variant() const noexcept { return variant_; }
  bool allows(std::size_t row, std::size_t col) const { return allow_[row * size_ + col] != 0; }
  void set(std::size_t row, std::size_t col, bool v) { allow_[row * size_ + col] = v ? 1 : 0; }
  std::span<const std::uint8_t> row(std::size_t r) const {
    return {allow_.data() + r * size_, size_};
  }
  const std::vector<std::uint8_t>& data() const noexcept { return allow_; }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t size_ = 0;
  MaskVariant variant_ = MaskVariant::BlockTriangular;
  std::vector<std::uint8_t> allow_;
};

AttentionMask build_mask(const TokenizedSequence& seq, MaskVariant variant);

}  // namespace charm
