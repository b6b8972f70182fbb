#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqdistill/data/split.hpp"
#include "seqdistill/num/rng.hpp"

namespace seqdistill::data {

enum class ShuffleScope { train_once, inference };

inline const char* to_string(ShuffleScope s) { return s == ShuffleScope::train_once ? "train-once" : "inference"; }

inline ShuffleScope parse_shuffle_scope(const std::string& s) {
  if (s == "train-once" || s == "train") return ShuffleScope::train_once;
  if (s == "inference" || s == "infer") return ShuffleScope::inference;
  fail(ErrorKind::config, "unknown shuffle scope '" + s + "'");
}

// Uniform permutation of the item payload. Timestamps stay in their slots,
// so position and time markers keep their original order.
inline Sequence shuffle_payload(const Sequence& s, num::Rng& rng) {
  std::vector<int> items;
  items.reserve(s.size());
  for (const Event& e : s) items.push_back(e.item);
  rng.shuffle(items);
  Sequence out = s;
  for (std::size_t k = 0; k < s.size(); ++k) out[k].item = items[k];
  return out;
}

// Dataset view with every full sequence shuffled once.
inline InteractionDataset shuffle_sequences(const InteractionDataset& ds, const num::Rng& rng) {
  num::Rng root = rng.split("shuffle/dataset");
  std::vector<Sequence> seqs;
  seqs.reserve(ds.num_users());
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    num::Rng r = root.split(static_cast<std::uint64_t>(u));
    seqs.push_back(shuffle_payload(ds.sequences()[u], r));
  }
  return ds.with_sequences(std::move(seqs));
}

// train-once: each training prefix is permuted once; held-out items stay.
// The permutation is fixed for the whole run, so every training prefix
// derived from it sees the same order.
inline SplitSpec shuffle_train(const SplitSpec& split, const num::Rng& rng) {
  num::Rng root = rng.split("shuffle/train-once");
  SplitSpec out = split;
  for (UserSplit& us : out.users) {
    num::Rng r = root.split(static_cast<std::uint64_t>(us.user));
    us.train = shuffle_payload(us.train, r);
  }
  return out;
}

// Inference scope: the input history of a phase, permuted with a substream
// keyed by (user, phase) so every model sees the same shuffled input.
inline Sequence shuffled_history(const SplitSpec& split, std::size_t k, Phase phase, const num::Rng& rng) {
  num::Rng r = rng.split("shuffle/inference").split(to_string(phase)).split(static_cast<std::uint64_t>(split.users[k].user));
  return shuffle_payload(split.history(k, phase), r);
}

}  // namespace seqdistill::data
