#pragma once

#include <algorithm>
#include <string>
#include <unordered_set>
#include <vector>

#include "seqdistill/data/dataset.hpp"
#include "seqdistill/num/rng.hpp"

namespace seqdistill::data {

struct UserSplit {
  int user = 0;
  Sequence train;  // i_1 .. i_{n-2}
  Event valid;     // i_{n-1}
  Event test;      // i_n
};

enum class Phase { valid, test };

inline const char* to_string(Phase p) { return p == Phase::valid ? "valid" : "test"; }

struct SplitSpec {
  std::vector<UserSplit> users;  // ascending user index
  std::size_t excluded = 0;      // users with fewer than 3 interactions

  // Model input preceding the held-out item of a phase.
  Sequence history(std::size_t k, Phase phase) const {
    const UserSplit& s = users[k];
    Sequence h = s.train;
    if (phase == Phase::test) h.push_back(s.valid);
    return h;
  }
  const Event& target(std::size_t k, Phase phase) const {
    return phase == Phase::valid ? users[k].valid : users[k].test;
  }
};

inline SplitSpec split_leave_last_out(const InteractionDataset& ds) {
  SplitSpec out;
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const Sequence& s = ds.sequences()[u];
    if (s.size() < 3) {
      ++out.excluded;
      continue;
    }
    UserSplit us;
    us.user = static_cast<int>(u);
    us.train.assign(s.begin(), s.end() - 2);
    us.valid = s[s.size() - 2];
    us.test = s.back();
    out.users.push_back(std::move(us));
  }
  return out;
}

struct CandidateSet {
  int user = 0;
  int positive = 0;
  std::vector<int> negatives;
  std::size_t shortfall = 0;  // requested minus drawn

  // Positive first, then negatives.
  std::vector<int> items() const {
    std::vector<int> c{positive};
    c.insert(c.end(), negatives.begin(), negatives.end());
    return c;
  }
};

struct EvalCandidates {
  std::vector<CandidateSet> valid, test;  // aligned with SplitSpec::users
  std::size_t shortfall_users = 0;

  const std::vector<CandidateSet>& of(Phase p) const { return p == Phase::valid ? valid : test; }
};

// m negatives drawn uniformly without replacement from items the user never
// interacted with. Rejection sampling when the pool is large, explicit pool
// otherwise; either way the draw depends only on the substream.
inline std::vector<int> sample_negatives(const std::unordered_set<int>& seen, std::size_t num_items, std::size_t m,
                                         num::Rng& rng, std::size_t* shortfall) {
  const std::size_t pool_size = num_items - seen.size();
  std::vector<int> out;
  if (pool_size >= 2 * m + 16) {
    std::unordered_set<int> taken;
    while (out.size() < m) {
      int c = static_cast<int>(rng.uniform_int(num_items));
      if (seen.count(c) || !taken.insert(c).second) continue;
      out.push_back(c);
    }
  } else {
    std::vector<int> pool;
    pool.reserve(pool_size);
    for (std::size_t i = 0; i < num_items; ++i)
      if (!seen.count(static_cast<int>(i))) pool.push_back(static_cast<int>(i));
    out = rng.sample(std::move(pool), m);
  }
  if (shortfall) *shortfall = m - out.size();
  return out;
}

// Valid and test negatives come from independent substreams per user.
inline EvalCandidates sample_eval_candidates(const InteractionDataset& ds, const SplitSpec& split, std::size_t m,
                                             const num::Rng& rng) {
  EvalCandidates out;
  num::Rng vroot = rng.split("candidates/valid"), troot = rng.split("candidates/test");
  for (const UserSplit& us : split.users) {
    std::unordered_set<int> seen;
    for (const Event& e : ds.sequence(us.user)) seen.insert(e.item);
    bool short_user = false;
    for (Phase ph : {Phase::valid, Phase::test}) {
      num::Rng r = (ph == Phase::valid ? vroot : troot).split(static_cast<std::uint64_t>(us.user));
      CandidateSet cs;
      cs.user = us.user;
      cs.positive = ph == Phase::valid ? us.valid.item : us.test.item;
      cs.negatives = sample_negatives(seen, ds.num_items(), m, r, &cs.shortfall);
      short_user = short_user || cs.shortfall > 0;
      (ph == Phase::valid ? out.valid : out.test).push_back(std::move(cs));
    }
    if (short_user) ++out.shortfall_users;
  }
  return out;
}

// Hash of every candidate list, for auditing that compared models saw the
// same sets.
inline std::string candidates_hash(const EvalCandidates& c) {
  io::Sha256 h;
  for (const auto* v : {&c.valid, &c.test})
    for (const auto& cs : *v) {
      h.update(std::to_string(cs.user)).update(":", 1);
      for (int i : cs.items()) h.update(std::to_string(i)).update(",", 1);
      h.update("\n", 1);
    }
  return h.hex();
}

}  // namespace seqdistill::data
