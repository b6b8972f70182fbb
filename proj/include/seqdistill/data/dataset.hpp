#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "seqdistill/error.hpp"
#include "seqdistill/io.hpp"

namespace seqdistill::data {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t ts = 0;
  std::string title;
};

// One element of a user sequence: internal item index plus its timestamp.
struct Event {
  int item = 0;
  std::int64_t ts = 0;
  bool operator==(const Event&) const = default;
};

using Sequence = std::vector<Event>;

class InteractionDataset {
 public:
  InteractionDataset() = default;

  // Users and items are indexed in order of first appearance. Each sequence
  // is sorted by timestamp; equal timestamps keep input order.
  static InteractionDataset from_interactions(const std::vector<Interaction>& rows) {
    InteractionDataset ds;
    for (const auto& r : rows) {
      require(r.ts >= 0, "negative timestamp for user '" + r.user + "'");
      int u = ds.intern_user(r.user);
      int i = ds.intern_item(r.item, r.title);
      ds.seqs_[static_cast<std::size_t>(u)].push_back({i, r.ts});
    }
    for (auto& s : ds.seqs_)
      std::stable_sort(s.begin(), s.end(), [](const Event& a, const Event& b) { return a.ts < b.ts; });
    return ds;
  }

  std::size_t num_users() const { return user_ids_.size(); }
  std::size_t num_items() const { return item_ids_.size(); }
  std::size_t num_interactions() const {
    std::size_t n = 0;
    for (const auto& s : seqs_) n += s.size();
    return n;
  }

  const Sequence& sequence(int user) const { return seqs_.at(static_cast<std::size_t>(user)); }
  const std::vector<Sequence>& sequences() const { return seqs_; }
  const std::string& title(int item) const { return titles_.at(static_cast<std::size_t>(item)); }
  const std::vector<std::string>& titles() const { return titles_; }
  const std::string& user_id(int user) const { return user_ids_.at(static_cast<std::size_t>(user)); }
  const std::string& item_id(int item) const { return item_ids_.at(static_cast<std::size_t>(item)); }

  int user_index(const std::string& ext) const {
    auto it = user_index_.find(ext);
    return it == user_index_.end() ? -1 : it->second;
  }
  int item_index(const std::string& ext) const {
    auto it = item_index_.find(ext);
    return it == item_index_.end() ? -1 : it->second;
  }

  // Rows in user order, each user's events in sequence order.
  std::vector<Interaction> to_interactions() const {
    std::vector<Interaction> out;
    out.reserve(num_interactions());
    for (std::size_t u = 0; u < seqs_.size(); ++u)
      for (const Event& e : seqs_[u])
        out.push_back({user_ids_[u], item_ids_[static_cast<std::size_t>(e.item)], e.ts, titles_[static_cast<std::size_t>(e.item)]});
    return out;
  }

  // Copy with every sequence replaced; items and users keep their indices.
  InteractionDataset with_sequences(std::vector<Sequence> seqs) const {
    require(seqs.size() == seqs_.size(), "with_sequences: user count mismatch");
    InteractionDataset ds = *this;
    ds.seqs_ = std::move(seqs);
    return ds;
  }

  // Keeps the given users and items, re-indexing densely in old index order.
  // Events on dropped items are removed from kept users' sequences.
  InteractionDataset subset(const std::vector<char>& keep_user, const std::vector<char>& keep_item) const {
    InteractionDataset ds;
    std::vector<int> item_map(num_items(), -1);
    for (std::size_t i = 0; i < num_items(); ++i)
      if (keep_item[i]) item_map[i] = ds.intern_item(item_ids_[i], titles_[i]);
    for (std::size_t u = 0; u < num_users(); ++u) {
      if (!keep_user[u]) continue;
      int nu = ds.intern_user(user_ids_[u]);
      for (const Event& e : seqs_[u]) {
        int ni = item_map[static_cast<std::size_t>(e.item)];
        if (ni >= 0) ds.seqs_[static_cast<std::size_t>(nu)].push_back({ni, e.ts});
      }
    }
    return ds;
  }

  // Content hash over ids, titles and sequences (order-sensitive).
  std::string content_hash() const {
    io::Sha256 h;
    for (const auto& r : to_interactions()) {
      h.update(r.user).update("\x1f", 1).update(r.item).update("\x1f", 1);
      h.update(std::to_string(r.ts)).update("\x1f", 1).update(r.title).update("\n", 1);
    }
    return h.hex();
  }

 private:
  int intern_user(const std::string& ext) {
    auto [it, fresh] = user_index_.try_emplace(ext, static_cast<int>(user_ids_.size()));
    if (fresh) {
      user_ids_.push_back(ext);
      seqs_.emplace_back();
    }
    return it->second;
  }

  // The first non-empty title seen for an item wins.
  int intern_item(const std::string& ext, const std::string& title) {
    auto [it, fresh] = item_index_.try_emplace(ext, static_cast<int>(item_ids_.size()));
    if (fresh) {
      item_ids_.push_back(ext);
      titles_.push_back(title);
    } else if (titles_[static_cast<std::size_t>(it->second)].empty()) {
      titles_[static_cast<std::size_t>(it->second)] = title;
    }
    return it->second;
  }

  std::vector<std::string> user_ids_, item_ids_, titles_;
  std::unordered_map<std::string, int> user_index_, item_index_;
  std::vector<Sequence> seqs_;
};

// Parses JSON Lines with {"user","item","ts","title"} objects. Blank lines
// are skipped.
inline std::vector<Interaction> parse_jsonl(std::istream& in, const std::string& source = "<input>") {
  std::vector<Interaction> rows;
  std::string line;
  std::size_t lineno = 0;
  auto bad = [&](const std::string& why) {
    fail(ErrorKind::data, source + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      bad(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) bad("expected a JSON object");
    Interaction r;
    for (const char* key : {"user", "item", "title"}) {
      auto it = j.find(key);
      if (it == j.end()) bad(std::string("missing field '") + key + "'");
      if (!it->is_string()) bad(std::string("field '") + key + "' must be a string");
    }
    auto ts = j.find("ts");
    if (ts == j.end()) bad("missing field 'ts'");
    if (!ts->is_number_integer()) bad("field 'ts' must be an integer");
    r.user = j["user"].get<std::string>();
    r.item = j["item"].get<std::string>();
    r.title = j["title"].get<std::string>();
    r.ts = ts->get<std::int64_t>();
    if (r.ts < 0) bad("field 'ts' must be non-negative");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline InteractionDataset ingest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  return InteractionDataset::from_interactions(parse_jsonl(in, path));
}

inline std::string to_jsonl(const InteractionDataset& ds) {
  std::string out;
  for (const auto& r : ds.to_interactions()) {
    nlohmann::json j = {{"user", r.user}, {"item", r.item}, {"ts", r.ts}, {"title", r.title}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void write_jsonl(const InteractionDataset& ds, const std::string& path) { io::atomic_write(path, to_jsonl(ds)); }

// Iterated k-core: drop users and items with fewer than k interactions until
// nothing changes.
inline InteractionDataset five_core(const InteractionDataset& ds, std::size_t k = 5) {
  InteractionDataset cur = ds;
  while (true) {
    std::vector<std::size_t> item_count(cur.num_items(), 0);
    for (const auto& s : cur.sequences())
      for (const Event& e : s) ++item_count[static_cast<std::size_t>(e.item)];
    std::vector<char> keep_user(cur.num_users()), keep_item(cur.num_items());
    bool changed = false;
    for (std::size_t u = 0; u < cur.num_users(); ++u) {
      keep_user[u] = cur.sequences()[u].size() >= k;
      changed = changed || !keep_user[u];
    }
    for (std::size_t i = 0; i < cur.num_items(); ++i) {
      keep_item[i] = item_count[i] >= k;
      changed = changed || !keep_item[i];
    }
    if (!changed) break;
    cur = cur.subset(keep_user, keep_item);
    if (cur.num_users() == 0 || cur.num_items() == 0)
      fail(ErrorKind::data, "dataset vanished under " + std::to_string(k) + "-core filtering");
  }
  if (cur.num_users() == 0) fail(ErrorKind::data, "dataset vanished under " + std::to_string(k) + "-core filtering");
  return cur;
}

}  // namespace seqdistill::data
