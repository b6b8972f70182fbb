#pragma once

#include <vector>

#include "seqdistill/distill/model.hpp"
#include "seqdistill/num/gradcheck.hpp"

namespace seqdistill::distill {

// Toy instance of the summed objective: d = d_enc = d' = 8, four users, f64.
struct ToyObjective {
  DistillModel<double> model;
  DistillBatch batch;
  Tensor<double> cf_items;  // [7, 8], row 0 zero
  Tensor<double> cf_users;  // [4, 8]

  explicit ToyObjective(std::uint64_t seed, bool include_user_rep = false)
      : model(toy_encoder(seed), DistillConfig{8, 8, include_user_rep, seed}) {
    num::Rng rng = num::Rng(seed).split("toy-objective");
    cf_items = num::seeded_init<double>({7, 8}, num::InitScheme::normal, rng, 0.5);
    std::fill_n(cf_items.data.begin(), 8, 0.0);
    cf_users = num::seeded_init<double>({4, 8}, num::InitScheme::normal, rng, 0.5);
    const enc::HashSpace space = model.encoder().space();
    std::vector<std::vector<int>> titles;
    for (int i = 0; i < 6; ++i) titles.push_back({i % 5, 5 + i});
    for (int u = 0; u < 4; ++u) {
      std::vector<enc::PromptItem> items;
      for (int k = 0; k < 2 + u % 2; ++k) {
        const int item = (u + 2 * k) % 6;
        items.push_back({titles[static_cast<std::size_t>(item)], 1600000000 + 86400 * 40 * k, item + 1});
      }
      batch.user_prompts.push_back(enc::assemble_user_prompt(items, space, {50, 64, include_user_rep}));
      batch.candidates.push_back({static_cast<std::size_t>(u), static_cast<std::size_t>((u + 1) % 6),
                                  static_cast<std::size_t>((u + 3) % 6)});
    }
    for (int i = 0; i < 6; ++i) batch.item_prompts.push_back(enc::assemble_item_prompt(titles[static_cast<std::size_t>(i)], i + 1));
  }

  static enc::EncoderConfig toy_encoder(std::uint64_t seed) {
    enc::EncoderConfig c;
    c.layers = 2;
    c.heads = 2;
    c.d_enc = 8;
    c.buckets = 64;
    c.p_max = 64;
    c.seed = seed;
    return c;
  }

  BatchLosses<double> build(Tape<double>& t, DistillKind kind = DistillKind::mse, const LossWeights& w = {}) const {
    return model.losses(t, batch, t.view(cf_items), t.view(cf_users), kind, w);
  }
};

// Max relative error of the analytic gradient of the summed objective
// against central differences, over every trainable coordinate.
inline double objective_gradcheck(std::uint64_t seed, DistillKind kind = DistillKind::mse, bool include_user_rep = false) {
  ToyObjective toy(seed, include_user_rep);
  auto build = [&](Tape<double>& t) { return toy.build(t, kind).total; };
  return num::grad_check(build, toy.model.trainable());
}

}  // namespace seqdistill::distill
