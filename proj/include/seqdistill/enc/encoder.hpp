#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "seqdistill/enc/prompt.hpp"
#include "seqdistill/io.hpp"
#include "seqdistill/num/layers.hpp"

namespace seqdistill::enc {

using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Var;

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_enc = 64;
  std::size_t buckets = std::size_t{1} << 14;
  std::size_t p_max = 512;
  std::uint64_t seed = 0;
  std::uint64_t hash_seed = 0;

  HashSpace space() const { return {buckets, hash_seed}; }
};

// Decoder-style pre-LN transformer with seeded random weights. Everything is
// frozen except the two special-token rows.
template <class T>
class FrozenEncoder {
 public:
  explicit FrozenEncoder(EncoderConfig cfg) : cfg_(cfg) {
    const std::size_t d = cfg.d_enc;
    require(cfg.layers > 0 && d > 0 && cfg.p_max > 0 && cfg.buckets > 0, "invalid encoder config");
    num::Rng rng = num::Rng(cfg.seed).split("encoder/init");
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
    tokens_ = &store_.add("enc.tokens", num::seeded_init<T>({cfg.buckets, d}, num::InitScheme::normal, rng, sigma), true);
    positions_ = &store_.add("enc.positions", num::seeded_init<T>({cfg.p_max, d}, num::InitScheme::normal, rng, sigma), true);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "enc.block" + std::to_string(l);
      blocks_.push_back({num::LayerNorm<T>(store_, p + ".ln1", d, true),
                         num::MultiHeadAttention<T>(store_, p + ".attn", d, cfg.heads, rng, true),
                         num::LayerNorm<T>(store_, p + ".ln2", d, true),
                         num::FeedForward<T>(store_, p + ".ffn", d, 4 * d, rng, true, true)});
    }
    final_ln_ = num::LayerNorm<T>(store_, "enc.final_ln", d, true);
    special_ = &store_.add("special", num::seeded_init<T>({2, d}, num::InitScheme::normal, rng, sigma));
  }

  FrozenEncoder(const FrozenEncoder&) = delete;
  FrozenEncoder& operator=(const FrozenEncoder&) = delete;
  FrozenEncoder(FrozenEncoder&&) = default;

  const EncoderConfig& config() const { return cfg_; }
  HashSpace space() const { return cfg_.space(); }
  std::size_t dim() const { return cfg_.d_enc; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  num::Param<T>& special() { return *special_; }

  // SHA-256 over the frozen arrays in registration order.
  std::string frozen_hash() const {
    io::Sha256 h;
    for (const auto* p : store_.all()) {
      if (!p->frozen) continue;
      h.update(p->name);
      h.update(std::string_view(reinterpret_cast<const char*>(p->value.data.data()), p->value.size() * sizeof(T)));
    }
    return h.hex();
  }

  // Final hidden state at each prompt's last (special) position: [B, d_enc].
  // item_slots rows back item_slot units; user_slots row b backs the user
  // slot of prompt b.
  Var<T> encode(Tape<T>& t, const std::vector<PromptStream>& prompts, Var<T> item_slots,
                std::optional<Var<T>> user_slots = std::nullopt) const {
    const std::size_t B = prompts.size(), d = cfg_.d_enc;
    require(B > 0, "encode: empty batch");
    std::size_t L = 0;
    for (const auto& p : prompts) {
      p.validate(cfg_.p_max);
      L = std::max(L, p.size());
    }
    std::vector<Var<T>> tables{t.param(*tokens_), item_slots, t.param(*special_)};
    if (user_slots) tables.push_back(*user_slots);
    std::vector<num::RowRef> refs(B * L);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& units = prompts[b].units;
      for (std::size_t k = 0; k < units.size(); ++k) {
        const Unit& u = units[k];
        num::RowRef& r = refs[b * L + k];
        switch (u.kind) {
          case UnitKind::hash: r = {0, u.id}; break;
          case UnitKind::item_slot: r = {1, u.id}; break;
          case UnitKind::special: r = {2, u.id}; break;
          case UnitKind::user_slot:
            require(user_slots.has_value(), "encode: prompt has a user slot but no user-slot rows were given");
            r = {3, static_cast<int>(b)};
            break;
        }
      }
    }
    Var<T> x = num::gather_rows_multi(tables, refs, {B, L});
    // Positions count back from the special unit, so the readout sees the
    // most recent history at fixed offsets whatever the prompt length.
    Tensor<T> pos({B, L, d});
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t n = prompts[b].size();
      for (std::size_t k = 0; k < n; ++k) std::copy_n(positions_->value.row(n - 1 - k), d, pos.row(b * L + k));
    }
    x = num::add(x, t.constant(std::move(pos)));

    // Right padding: real positions never see padded keys under the causal mask.
    std::vector<unsigned char> mask(L * L);
    for (std::size_t q = 0; q < L; ++q)
      for (std::size_t k = 0; k < L; ++k) mask[q * L + k] = k > q;
    for (const Block& blk : blocks_) {
      Var<T> h = blk.ln1(t, x);
      x = num::add(x, blk.attn(t, h, h, mask));
      x = num::add(x, blk.ffn(t, blk.ln2(t, x)));
    }
    std::vector<int> last(B);
    for (std::size_t b = 0; b < B; ++b) last[b] = static_cast<int>(b * L + prompts[b].size() - 1);
    return final_ln_(t, num::gather(num::reshape(x, {B * L, d}), last, {B}));
  }

 private:
  struct Block {
    num::LayerNorm<T> ln1;
    num::MultiHeadAttention<T> attn;
    num::LayerNorm<T> ln2;
    num::FeedForward<T> ffn;
  };

  EncoderConfig cfg_;
  ParamStore<T> store_;
  num::Param<T>* tokens_ = nullptr;
  num::Param<T>* positions_ = nullptr;
  num::Param<T>* special_ = nullptr;
  std::vector<Block> blocks_;
  num::LayerNorm<T> final_ln_;
};

}  // namespace seqdistill::enc
