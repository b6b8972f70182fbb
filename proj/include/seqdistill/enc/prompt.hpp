#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqdistill/enc/tokens.hpp"

namespace seqdistill::enc {

enum class UnitKind : std::uint8_t { hash, item_slot, user_slot, special };

enum Special : int { kUserOut = 0, kItemOut = 1 };

// One prompt position. id is a bucket for hash units, a row of the item-slot
// table for item slots (row 0 carries the zero CF embedding), and a Special
// for the terminator. User slots take the row of their prompt in the batch.
struct Unit {
  UnitKind kind = UnitKind::hash;
  int id = 0;

  bool operator==(const Unit& o) const { return kind == o.kind && id == o.id; }
  bool operator<(const Unit& o) const { return kind != o.kind ? kind < o.kind : id < o.id; }
};

struct PromptStream {
  std::vector<Unit> units;

  std::size_t size() const { return units.size(); }

  void validate(std::size_t p_max) const {
    require(!units.empty() && units.back().kind == UnitKind::special, "prompt must end with a special token");
    std::size_t specials = 0;
    for (const auto& u : units) specials += u.kind == UnitKind::special;
    require(specials == 1, "prompt must contain exactly one special token");
    require(units.size() <= p_max,
            "prompt length " + std::to_string(units.size()) + " exceeds P_max " + std::to_string(p_max));
  }
};

struct PromptItem {
  std::span<const int> title_tokens;
  std::int64_t ts = 0;
  int slot = 0;
};

struct PromptOptions {
  std::size_t max_items = 50;
  std::size_t p_max = 512;
  bool include_user_rep = false;
};

// Per history position: "no:k", "ts:YYYY-MM", title tokens, item slot. The
// user slot (optional) leads, [UserOut] ends. Oldest positions are dropped
// first, to max_items and then to p_max.
inline PromptStream assemble_user_prompt(const std::vector<PromptItem>& items, const HashSpace& space,
                                         const PromptOptions& opts) {
  const std::size_t fixed = 1 + (opts.include_user_rep ? 1 : 0);
  require(opts.p_max >= fixed, "P_max too small for an empty prompt");
  std::size_t first = items.size() > opts.max_items ? items.size() - opts.max_items : 0;
  std::size_t total = fixed;
  for (std::size_t k = first; k < items.size(); ++k) total += 3 + items[k].title_tokens.size();
  while (total > opts.p_max) total -= 3 + items[first++].title_tokens.size();

  PromptStream p;
  p.units.reserve(total);
  if (opts.include_user_rep) p.units.push_back({UnitKind::user_slot, 0});
  for (std::size_t k = first; k < items.size(); ++k) {
    const PromptItem& it = items[k];
    p.units.push_back({UnitKind::hash, space.bucket("no:" + std::to_string(k - first + 1))});
    p.units.push_back({UnitKind::hash, space.bucket(month_bucket(it.ts))});
    for (int tok : it.title_tokens) p.units.push_back({UnitKind::hash, tok});
    p.units.push_back({UnitKind::item_slot, it.slot});
  }
  p.units.push_back({UnitKind::special, kUserOut});
  return p;
}

inline PromptStream assemble_item_prompt(std::span<const int> title_tokens, int slot) {
  PromptStream p;
  for (int tok : title_tokens) p.units.push_back({UnitKind::hash, tok});
  p.units.push_back({UnitKind::item_slot, slot});
  p.units.push_back({UnitKind::special, kItemOut});
  return p;
}

}  // namespace seqdistill::enc
