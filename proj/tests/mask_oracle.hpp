#pragma once

#include <vector>

#include "charm/attention_mask.hpp"
#include "charm/rng.hpp"
#include "charm/tokenize.hpp"

namespace charm::testing {

enum class Role { Cls, Field, Pad };

// A token layout built position by position, with the role of every slot
// recorded independently of TokenizedSequence::field_of.
struct Layout {
  TokenizedSequence seq;
  std::vector<Role> role;
  std::vector<int> field;
};

// Random [CLS][FLD_0..][field contents + SEP][PAD] layout, total length <= max_len.
inline Layout random_layout(Rng& rng, std::size_t max_len, std::size_t max_fields) {
  Layout l;
  const std::size_t nf = 1 + rng.uniform_index(max_fields);
  auto push = [&](TokenId id, Role r, int f) {
    l.seq.ids.push_back(id);
    l.seq.field_of.push_back(r == Role::Cls ? kClsSlot : r == Role::Pad ? kPadSlot : f);
    l.role.push_back(r);
    l.field.push_back(f);
  };
  push(kClsId, Role::Cls, -1);
  l.seq.cls_pos = 0;
  for (std::size_t f = 0; f < nf; ++f) {
    l.seq.special_pos.push_back(l.seq.ids.size());
    push(static_cast<TokenId>(kFirstFieldTokenId + f), Role::Field, static_cast<int>(f));
  }
  const std::size_t total = 1 + nf + rng.uniform_index(max_len - nf);
  for (std::size_t f = 0; f < nf && l.seq.ids.size() < total; ++f) {
    const std::size_t room = total - l.seq.ids.size();
    if (room < 2 || rng.uniform_index(4) == 0) continue;
    const std::size_t words = 1 + rng.uniform_index(std::min<std::size_t>(room - 1, 12));
    for (std::size_t w = 0; w < words; ++w) push(50, Role::Field, static_cast<int>(f));
    push(kSepId, Role::Field, static_cast<int>(f));
  }
  l.seq.length = l.seq.ids.size();
  const std::size_t pads = rng.uniform_index(max_len - l.seq.ids.size() + 1);
  for (std::size_t i = 0; i < pads; ++i) push(kPadId, Role::Pad, -1);
  return l;
}

// The attention rule written out directly from token roles.
inline bool oracle_allows(const Layout& l, std::size_t row, std::size_t col, MaskVariant v) {
  if (l.role[row] == Role::Pad) return row == col;
  if (l.role[col] == Role::Pad) return false;
  if (l.role[row] == Role::Cls) return true;
  if (l.role[col] == Role::Cls) return false;
  switch (v) {
    case MaskVariant::BlockTriangular:
      return l.field[row] >= l.field[col];
    case MaskVariant::BlockDiagonal:
      return l.field[row] == l.field[col];
    case MaskVariant::Full:
      return true;
  }
  return false;
}

}  // namespace charm::testing
