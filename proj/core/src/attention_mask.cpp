#include "charm/attention_mask.hpp"

#include <string>

#include "charm/error.hpp"

namespace charm {

std::string_view to_string(MaskVariant v) noexcept {
  switch (v) {
    case MaskVariant::BlockTriangular: return "block_triangular";
    case MaskVariant::BlockDiagonal: return "block_diagonal";
    case MaskVariant::Full: return "full";
  }
  return "block_triangular";
}

MaskVariant parse_mask_variant(std::string_view name) {
  if (name == "block_triangular") return MaskVariant::BlockTriangular;
  if (name == "block_diagonal") return MaskVariant::BlockDiagonal;
  if (name == "full") return MaskVariant::Full;
  throw ConfigError("unknown mask variant '" + std::string(name) + "'");
}

AttentionMask build_mask(const TokenizedSequence& seq, MaskVariant variant) {
  const std::size_t n = seq.size();
  AttentionMask mask(n, variant);
  for (std::size_t row = 0; row < n; ++row) {
    const int fr = seq.field_of[row];
    if (fr == kPadSlot) {
      mask.set(row, row, true);
      continue;
    }
    for (std::size_t col = 0; col < n; ++col) {
      const int fc = seq.field_of[col];
      bool allow = false;
      if (fc == kPadSlot) {
        allow = false;
      } else if (fr == kClsSlot) {
        allow = true;
      } else if (fc == kClsSlot) {
        allow = false;
      } else {
        switch (variant) {
          case MaskVariant::BlockTriangular: allow = fr >= fc; break;
          case MaskVariant::BlockDiagonal: allow = fr == fc; break;
          case MaskVariant::Full: allow = true; break;
        }
      }
      mask.set(row, col, allow);
    }
  }
  return mask;
}

}  // namespace charm
