#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqdistill/data/dataset.hpp"
#include "seqdistill/num/rng.hpp"

namespace seqdistill::data {

struct MarkovSpec {
  std::size_t num_users = 2000;
  std::size_t num_items = 200;
  std::size_t len_min = 20;
  std::size_t len_max = 20;
  double p = 0.9;
  std::uint64_t seed = 0;
  // Successor cycle and item titles. Defaults to seed; two specs with the same
  // structure seed share transitions and titles.
  std::optional<std::uint64_t> structure_seed;
  std::string title_tag = "w";
  std::string item_prefix = "i";
  std::string user_prefix = "u";
  std::size_t num_categories = 8;
};

struct MarkovStructure {
  std::vector<int> successor;
  std::vector<int> category;
};

inline MarkovStructure markov_structure(const MarkovSpec& spec) {
  num::Rng rng = num::Rng(spec.structure_seed.value_or(spec.seed)).split("markov/structure");
  MarkovStructure st;
  std::vector<int> cycle(spec.num_items);
  for (std::size_t i = 0; i < cycle.size(); ++i) cycle[i] = static_cast<int>(i);
  rng.shuffle(cycle);
  st.successor.assign(spec.num_items, 0);
  for (std::size_t k = 0; k < cycle.size(); ++k)
    st.successor[static_cast<std::size_t>(cycle[k])] = cycle[(k + 1) % cycle.size()];
  st.category.resize(spec.num_items);
  for (auto& c : st.category) c = static_cast<int>(rng.uniform_int(spec.num_categories));
  return st;
}

inline std::string markov_title(const MarkovSpec& spec, const MarkovStructure& st, std::size_t item) {
  return spec.title_tag + std::to_string(item) + " " + spec.title_tag + "cat" +
         std::to_string(st.category[item]);
}

// Items form one random successor cycle. From item c the next item is
// successor(c) with probability p, otherwise uniform over the other items.
inline InteractionDataset gen_markov(const MarkovSpec& spec) {
  if (!(spec.p > 0.0 && spec.p <= 1.0)) fail(ErrorKind::config, "markov p must be in (0, 1]");
  if (spec.num_items < 2) fail(ErrorKind::config, "markov generator needs at least 2 items");
  if (spec.len_min < 1 || spec.len_max < spec.len_min) fail(ErrorKind::config, "invalid markov length range");
  if (spec.num_categories < 1) fail(ErrorKind::config, "markov generator needs at least 1 category");
  const MarkovStructure st = markov_structure(spec);
  num::Rng root = num::Rng(spec.seed).split("markov/sequences");
  const std::int64_t t0 = 1'600'000'000;
  std::vector<Interaction> rows;
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    num::Rng r = root.split(static_cast<std::uint64_t>(u));
    const std::size_t len = spec.len_min + static_cast<std::size_t>(r.uniform_int(spec.len_max - spec.len_min + 1));
    const std::string uid = spec.user_prefix + std::to_string(u);
    std::int64_t ts = t0 + static_cast<std::int64_t>(r.uniform_int(365ull * 86400));
    int cur = static_cast<int>(r.uniform_int(spec.num_items));
    for (std::size_t k = 0; k < len; ++k) {
      if (k > 0) {
        const int succ = st.successor[static_cast<std::size_t>(cur)];
        if (r.uniform01() < spec.p) {
          cur = succ;
        } else {
          int pick = static_cast<int>(r.uniform_int(spec.num_items - 1));
          cur = pick >= succ ? pick + 1 : pick;
        }
        ts += 3600 + static_cast<std::int64_t>(r.uniform_int(30ull * 86400));
      }
      const auto item = static_cast<std::size_t>(cur);
      rows.push_back({uid, spec.item_prefix + std::to_string(item), ts, markov_title(spec, st, item)});
    }
  }
  return InteractionDataset::from_interactions(rows);
}

}  // namespace seqdistill::data
