#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqdistill/error.hpp"

namespace seqdistill::eval {

struct RankResult {
  int user = 0;
  std::size_t rank = 1;  // 1-indexed
  std::size_t count = 0;
};

// Pessimistic ties: every other candidate scoring >= the positive outranks it.
template <class T>
std::size_t pessimistic_rank(const std::vector<T>& scores, std::size_t pos) {
  require(pos < scores.size(), "rank: positive index out of range");
  const T sp = scores[pos];
  std::size_t above = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (j != pos && !(scores[j] < sp)) ++above;
  return above + 1;
}

inline double hit_at(std::size_t rank, std::size_t n) { return rank <= n ? 1.0 : 0.0; }
inline double ndcg_at(std::size_t rank, std::size_t n) {
  return rank <= n ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

// Fixed metric family, in report order.
inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"HR@1", "HR@10", "HR@20", "NDCG@10", "NDCG@20"};
  return names;
}

struct MetricSums {
  double hr1 = 0, hr10 = 0, hr20 = 0, ndcg10 = 0, ndcg20 = 0;
  std::size_t users = 0;

  void add(std::size_t rank) {
    hr1 += hit_at(rank, 1);
    hr10 += hit_at(rank, 10);
    hr20 += hit_at(rank, 20);
    ndcg10 += ndcg_at(rank, 10);
    ndcg20 += ndcg_at(rank, 20);
    ++users;
  }
  void merge(const MetricSums& o) {
    hr1 += o.hr1;
    hr10 += o.hr10;
    hr20 += o.hr20;
    ndcg10 += o.ndcg10;
    ndcg20 += o.ndcg20;
    users += o.users;
  }
};

struct EvalReport {
  std::string subset = "all";
  std::size_t users = 0;
  std::size_t skipped = 0;
  std::map<std::string, double> metrics;  // empty when users == 0

  bool empty() const { return users == 0; }
  double at(const std::string& name) const {
    auto it = metrics.find(name);
    require(it != metrics.end(), "metric '" + name + "' not in report");
    return it->second;
  }
};

inline EvalReport finalize(const MetricSums& s, std::string subset = "all", std::size_t skipped = 0) {
  EvalReport r;
  r.subset = std::move(subset);
  r.users = s.users;
  r.skipped = skipped;
  if (s.users == 0) return r;
  const double n = static_cast<double>(s.users);
  r.metrics = {{"HR@1", s.hr1 / n}, {"HR@10", s.hr10 / n}, {"HR@20", s.hr20 / n},
               {"NDCG@10", s.ndcg10 / n}, {"NDCG@20", s.ndcg20 / n}};
  return r;
}

// (shuffled - original) / original * 100; undefined when original is 0.
inline std::optional<double> change_ratio(double original, double shuffled) {
  if (!(original > 0.0)) return std::nullopt;
  return (shuffled - original) / original * 100.0;
}

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string format_percent(std::optional<double> v) {
  if (!v) return "N/A";
  char buf[32];
  double x = *v;
  if (std::abs(x) < 0.005) x = 0.0;  // no "-0.00%"
  std::snprintf(buf, sizeof buf, "%.2f%%", x);
  return buf;
}

}  // namespace seqdistill::eval
