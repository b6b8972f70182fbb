#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <string>
#include <string_view>
#include <vector>

#include "seqdistill/error.hpp"
#include "seqdistill/num/rng.hpp"

namespace seqdistill::enc {

// Hashed vocabulary standing in for a subword tokenizer. The embedding table
// itself lives in the encoder; this only maps strings to buckets.
struct HashSpace {
  std::size_t buckets = std::size_t{1} << 14;
  std::uint64_t seed = 0;

  int bucket(std::string_view token) const {
    require(buckets > 0, "hash space needs at least one bucket");
    const std::uint64_t h = num::splitmix64(num::hash_label(token) ^ num::splitmix64(seed + 0x5EEDull));
    return static_cast<int>(h % buckets);
  }
};

// Lowercased alphanumeric runs; everything else separates.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<int> hash_title_tokens(std::string_view title, const HashSpace& space) {
  std::vector<int> ids;
  for (const auto& w : split_words(title)) ids.push_back(space.bucket(w));
  return ids;
}

// "ts:YYYY-MM" in UTC.
inline std::string month_bucket(std::int64_t unix_seconds) {
  const std::time_t tt = static_cast<std::time_t>(unix_seconds);
  std::tm tm{};
  if (gmtime_r(&tt, &tm) == nullptr) fail(ErrorKind::data, "timestamp out of range: " + std::to_string(unix_seconds));
  char buf[32];
  std::snprintf(buf, sizeof buf, "ts:%04d-%02d", tm.tm_year + 1900, tm.tm_mon + 1);
  return buf;
}

}  // namespace seqdistill::enc
