#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "seqdistill/data/split.hpp"
#include "seqdistill/io.hpp"

namespace seqdistill::data {

// How Count(a->b) is tallied over training sequences: every occurrence, or
// at most once per user sequence.
enum class TransitionCounting { global, per_user_unique };

inline TransitionCounting parse_transition_counting(const std::string& s) {
  if (s == "global") return TransitionCounting::global;
  if (s == "per-user-unique") return TransitionCounting::per_user_unique;
  fail(ErrorKind::config, "unknown transition counting '" + s + "' (expected global or per-user-unique)");
}

struct UserTransition {
  int user = 0;
  double t_score = 0.0;
  bool transition = false;
};

// Per-user t-score = mean of Count over the user's adjacent training pairs.
// The top half by t-score (ties by ascending user index) is flagged.
inline std::vector<UserTransition> transition_scores(const SplitSpec& split,
                                                     TransitionCounting mode = TransitionCounting::global) {
  std::map<std::pair<int, int>, double> count;
  for (const UserSplit& us : split.users) {
    std::set<std::pair<int, int>> mine;
    for (std::size_t t = 1; t < us.train.size(); ++t) {
      std::pair<int, int> key{us.train[t - 1].item, us.train[t].item};
      if (mode == TransitionCounting::per_user_unique && !mine.insert(key).second) continue;
      count[key] += 1.0;
    }
  }
  std::vector<UserTransition> out;
  out.reserve(split.users.size());
  for (const UserSplit& us : split.users) {
    UserTransition ut;
    ut.user = us.user;
    if (us.train.size() >= 2) {
      double s = 0.0;
      for (std::size_t t = 1; t < us.train.size(); ++t) s += count[{us.train[t - 1].item, us.train[t].item}];
      ut.t_score = s / static_cast<double>(us.train.size() - 1);
    }
    out.push_back(ut);
  }
  std::vector<std::size_t> order(out.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (out[a].t_score != out[b].t_score) return out[a].t_score > out[b].t_score;
    return out[a].user < out[b].user;
  });
  for (std::size_t k = 0; k < order.size() / 2; ++k) out[order[k]].transition = true;
  return out;
}

enum class ItemLabel { warm, cold, neither };

inline const char* to_string(ItemLabel l) {
  switch (l) {
    case ItemLabel::warm: return "warm";
    case ItemLabel::cold: return "cold";
    case ItemLabel::neither: return "neither";
  }
  return "neither";
}

struct ItemPopularity {
  std::vector<std::size_t> count;  // training interactions per item
  std::vector<ItemLabel> label;
};

// Items ranked by training count (descending, ties by ascending index); the
// first floor(q*|I|) are warm and the last floor(q*|I|) of the same order
// are cold.
inline ItemPopularity label_warm_cold(const InteractionDataset& ds, const SplitSpec& split, double q = 0.35) {
  if (!(q > 0.0 && q < 0.5)) fail(ErrorKind::config, "warm/cold fraction must be in (0, 0.5)");
  ItemPopularity pop;
  const std::size_t n = ds.num_items();
  pop.count.assign(n, 0);
  pop.label.assign(n, ItemLabel::neither);
  for (const UserSplit& us : split.users)
    for (const Event& e : us.train) ++pop.count[static_cast<std::size_t>(e.item)];
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pop.count[a] > pop.count[b]; });
  const auto k = static_cast<std::size_t>(q * static_cast<double>(n));
  for (std::size_t r = 0; r < k; ++r) {
    pop.label[order[r]] = ItemLabel::warm;
    pop.label[order[n - 1 - r]] = ItemLabel::cold;
  }
  return pop;
}

inline std::string transition_csv(const std::vector<UserTransition>& rows, const InteractionDataset& ds) {
  std::string out = "user_id,t_score,transition_flag\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.6f,%d\n", r.t_score, r.transition ? 1 : 0);
    out += ds.user_id(r.user) + buf;
  }
  return out;
}

inline std::string warm_cold_csv(const ItemPopularity& pop, const InteractionDataset& ds) {
  std::string out = "item_id,count,label\n";
  for (std::size_t i = 0; i < pop.count.size(); ++i)
    out += ds.item_id(static_cast<int>(i)) + "," + std::to_string(pop.count[i]) + "," + to_string(pop.label[i]) + "\n";
  return out;
}

}  // namespace seqdistill::data
