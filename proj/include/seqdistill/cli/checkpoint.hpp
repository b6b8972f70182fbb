#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>

#include <json.hpp>

#include "seqdistill/cf/sasrec.hpp"
#include "seqdistill/distill/model.hpp"
#include "seqdistill/io.hpp"

namespace seqdistill::cli {

// Container layout:
//   8 bytes   magic "SQDCKPT\0"
//   8 bytes   manifest length n, little-endian u64
//   n bytes   manifest JSON
//   rest      arrays, little-endian f32, concatenated in manifest order
// The manifest's content_hash is SHA-256 over (manifest without that field)
// followed by the array bytes.
inline constexpr char kMagic[8] = {'S', 'Q', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, num::Tensor<float>> arrays;
  std::string content_hash;  // filled by encode/decode
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

inline void append_f32(std::string& out, const std::vector<float>& data) {
  const std::size_t at = out.size();
  out.resize(at + 4 * data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint32_t u = to_le(std::bit_cast<std::uint32_t>(data[i]));
    std::memcpy(out.data() + at + 4 * i, &u, 4);
  }
}

}  // namespace detail

inline std::string encode_checkpoint(Checkpoint& ck) {
  nlohmann::json m;
  m["format_version"] = kFormatVersion;
  m["kind"] = ck.kind;
  m["config"] = ck.config;
  m["meta"] = ck.meta;
  m["arrays"] = nlohmann::json::object();
  std::string blob;
  for (const auto& [name, t] : ck.arrays) {
    m["arrays"][name] = {{"shape", t.shape}, {"dtype", "f32"}, {"offset", blob.size()}, {"length", 4 * t.data.size()}};
    detail::append_f32(blob, t.data);
  }
  ck.content_hash = io::Sha256().update(m.dump()).update(blob).hex();
  m["content_hash"] = ck.content_hash;
  const std::string manifest = m.dump();
  std::string out(kMagic, 8);
  detail::put_u64(out, manifest.size());
  out += manifest;
  out += blob;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>") {
  auto bad = [&](const std::string& why) { fail(ErrorKind::integrity, "checkpoint '" + source + "': " + why); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) bad("not a checkpoint container");
  const std::uint64_t n = detail::get_u64(bytes, 8);
  if (n > bytes.size() - 16) bad("truncated manifest");
  nlohmann::json m = nlohmann::json::parse(bytes.substr(16, n), nullptr, false);
  if (m.is_discarded() || !m.is_object()) bad("manifest is not valid JSON");
  if (!m.contains("format_version") || !m["format_version"].is_number_integer()) bad("manifest lacks format_version");
  if (m["format_version"].get<int>() != kFormatVersion)
    fail(ErrorKind::migration, "checkpoint '" + source + "' has format version " + m["format_version"].dump() +
                                   "; this build reads version " + std::to_string(kFormatVersion));
  const std::string blob = bytes.substr(16 + n);
  Checkpoint ck;
  try {
    ck.content_hash = m.at("content_hash").get<std::string>();
    m.erase("content_hash");
    if (io::Sha256().update(m.dump()).update(blob).hex() != ck.content_hash) bad("content hash mismatch");
    ck.kind = m.at("kind").get<std::string>();
    ck.config = m.at("config");
    ck.meta = m.at("meta");
    for (const auto& [name, a] : m.at("arrays").items()) {
      if (a.at("dtype") != "f32") bad("array '" + name + "' has unsupported dtype");
      const num::Shape shape = a.at("shape").get<num::Shape>();
      const std::size_t off = a.at("offset"), len = a.at("length");
      std::size_t count = 1;
      for (std::size_t s : shape) count *= s;
      if (len != 4 * count || off > blob.size() || len > blob.size() - off) bad("array '" + name + "' out of bounds");
      num::Tensor<float> t(shape);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u;
        std::memcpy(&u, blob.data() + off + 4 * i, 4);
        t.data[i] = std::bit_cast<float>(detail::to_le(u));
      }
      ck.arrays.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("malformed manifest: ") + e.what());
  }
  return ck;
}

inline std::string save_checkpoint(const std::string& path, Checkpoint ck) {
  io::atomic_write(path, encode_checkpoint(ck));
  return ck.content_hash;
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path), path); }

// Content hash of a parameter set, independent of any file.
template <class T>
std::string params_hash(const num::ParamStore<T>& store) {
  io::Sha256 h;
  for (const auto& [name, t] : store.snapshot()) {
    h.update(name).update("\0", 1);
    for (std::size_t s : t.shape) h.update(std::to_string(s) + ",");
    h.update(t.data.data(), t.data.size() * sizeof(T));
  }
  return h.hex();
}

// Restores exactly the recorded parameters: names and shapes must match.
template <class T>
void restore_exact(num::ParamStore<T>& store, const std::map<std::string, num::Tensor<T>>& arrays, bool trainable_only,
                   const std::string& path) {
  const auto want = store.snapshot(trainable_only);
  bool same = want.size() == arrays.size();
  for (auto a = want.begin(), b = arrays.begin(); same && a != want.end(); ++a, ++b)
    same = a->first == b->first && a->second.shape == b->second.shape;
  if (!same) fail(ErrorKind::integrity, "checkpoint '" + path + "': parameter set does not match the model");
  store.restore(arrays);
}

inline void expect_kind(const Checkpoint& ck, const std::string& kind, const std::string& path) {
  if (ck.kind != kind) fail(ErrorKind::data, "checkpoint '" + path + "' holds a " + ck.kind + " model, expected " + kind);
}

// ------------------------------------------------------------------ SASRec

inline Checkpoint sasrec_checkpoint(const cf::SasrecModel& m, const nlohmann::json& config) {
  Checkpoint ck;
  ck.kind = "sasrec";
  ck.config = config;
  const auto& c = m.config();
  ck.meta = {{"num_items", m.num_items()}, {"d", c.d},         {"blocks", c.blocks},
             {"heads", c.heads},           {"max_len", c.max_len}, {"dropout", c.dropout},
             {"seed", c.seed},             {"params_hash", params_hash(m.params())}};
  ck.arrays = m.params().snapshot();
  return ck;
}

inline cf::SasrecModel sasrec_from_checkpoint(const Checkpoint& ck, const std::string& path = "<checkpoint>") {
  expect_kind(ck, "sasrec", path);
  cf::SasrecConfig c;
  c.d = ck.meta.at("d");
  c.blocks = ck.meta.at("blocks");
  c.heads = ck.meta.at("heads");
  c.max_len = ck.meta.at("max_len");
  c.dropout = ck.meta.at("dropout");
  c.seed = ck.meta.at("seed");
  cf::SasrecModel m(ck.meta.at("num_items").get<std::size_t>(), c);
  restore_exact(m.params(), ck.arrays, false, path);
  return m;
}

// ----------------------------------------------------------------- distill

inline Checkpoint distill_checkpoint(const distill::DistillModel<float>& m, const cf::SasrecModel& cf,
                                     const nlohmann::json& config) {
  Checkpoint ck;
  ck.kind = "distill";
  ck.config = config;
  const auto& e = m.encoder().config();
  const auto& d = m.config();
  ck.meta = {{"encoder", {{"layers", e.layers}, {"heads", e.heads}, {"d_enc", e.d_enc}, {"buckets", e.buckets},
                          {"p_max", e.p_max}, {"seed", e.seed}, {"hash_seed", e.hash_seed}}},
             {"distill", {{"d", d.d}, {"d_prime", d.d_prime}, {"include_user_rep", d.include_user_rep}, {"seed", d.seed}}},
             {"encoder_hash", m.encoder().frozen_hash()},
             {"cf_hash", params_hash(cf.params())}};
  ck.arrays = m.heads().snapshot();
  for (const auto& [name, t] : m.encoder().params().snapshot(true)) ck.arrays.emplace("enc/" + name, t);
  return ck;
}

// The frozen encoder is regenerated from its recorded config and must hash
// to the recorded value; cf must be the model the heads were trained with.
inline distill::DistillModel<float> distill_from_checkpoint(const Checkpoint& ck, const cf::SasrecModel& cf,
                                                            const std::string& path = "<checkpoint>") {
  expect_kind(ck, "distill", path);
  const auto& em = ck.meta.at("encoder");
  enc::EncoderConfig e;
  e.layers = em.at("layers");
  e.heads = em.at("heads");
  e.d_enc = em.at("d_enc");
  e.buckets = em.at("buckets");
  e.p_max = em.at("p_max");
  e.seed = em.at("seed");
  e.hash_seed = em.at("hash_seed");
  const auto& dm = ck.meta.at("distill");
  distill::DistillConfig d;
  d.d = dm.at("d");
  d.d_prime = dm.at("d_prime");
  d.include_user_rep = dm.at("include_user_rep");
  d.seed = dm.at("seed");
  if (params_hash(cf.params()) != ck.meta.at("cf_hash").get<std::string>())
    fail(ErrorKind::dependency, "checkpoint '" + path + "' was trained against a different CF model");
  distill::DistillModel<float> m(e, d);
  if (m.encoder().frozen_hash() != ck.meta.at("encoder_hash").get<std::string>())
    fail(ErrorKind::dependency, "checkpoint '" + path + "': regenerated frozen encoder does not match its recorded hash");
  std::map<std::string, num::Tensor<float>> heads, enc;
  for (const auto& [name, t] : ck.arrays) {
    if (name.rfind("enc/", 0) == 0)
      enc.emplace(name.substr(4), t);
    else
      heads.emplace(name, t);
  }
  restore_exact(m.heads(), heads, false, path);
  restore_exact(m.encoder().params(), enc, true, path);
  return m;
}

}  // namespace seqdistill::cli
