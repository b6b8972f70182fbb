#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "seqdistill/data/synth.hpp"
#include "seqdistill/distill/selfcheck.hpp"
#include "seqdistill/distill/train.hpp"

using namespace seqdistill;
using namespace seqdistill::distill;

namespace {

using D = double;

Tensor<D> rand_mat(std::size_t r, std::size_t c, num::Rng& rng) {
  Tensor<D> t({r, c});
  for (auto& v : t.data) v = rng.uniform(-1, 1);
  return t;
}

double value_of(const std::function<Var<D>(Tape<D>&)>& f) {
  Tape<D> t;
  return f(t).item();
}

enc::EncoderConfig small_encoder() {
  enc::EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_enc = 16;
  c.buckets = 512;
  c.p_max = 128;
  c.seed = 4;
  return c;
}

// 20 users over 10 items, 6 distinct items each; titles are item-specific.
struct Toy {
  data::InteractionDataset ds;
  data::SplitSpec split;
  data::EvalCandidates cands;
  cf::SasrecModel cf;
};

Toy& toy() {
  static Toy* t = [] {
    num::Rng rng(2);
    std::vector<data::Interaction> rows;
    for (int u = 0; u < 20; ++u) {
      std::vector<int> items = rng.sample(std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 6);
      for (int k = 0; k < 6; ++k)
        rows.push_back({"u" + std::to_string(u), "i" + std::to_string(items[k]), 1600000000 + 86400 * k,
                        "title " + std::to_string(items[k])});
    }
    auto ds = data::InteractionDataset::from_interactions(rows);
    auto split = data::split_leave_last_out(ds);
    auto cands = data::sample_eval_candidates(ds, split, 4, num::Rng(1));
    cf::SasrecConfig mc;
    mc.d = 16;
    mc.max_len = 6;
    mc.dropout = 0.0;
    auto* out = new Toy{std::move(ds), std::move(split), std::move(cands), cf::SasrecModel(10, mc)};
    cf::CfTrainConfig tc;
    tc.lr = 1e-2;
    tc.max_epochs = 100;
    tc.batch_size = 20;
    tc.eval_every = 1.0;
    tc.patience = 1000;
    tc.restore_best = false;
    cf::train_sasrec(out->cf, out->ds, out->split, out->cands, tc);
    return out;
  }();
  return *t;
}

DistillTrainConfig toy_train_config() {
  DistillTrainConfig c;
  c.lr = 5e-3;
  c.max_epochs = 150;
  c.eval_every = 1.0;
  c.patience = 10000;
  c.restore_best = false;
  return c;
}

// Fraction of users whose last training target outranks every item they
// never interacted with, given the preceding prefix.
double train_hr1(const DistillModel<float>& m, const Toy& t) {
  DistillRecommender rec(m, t.ds, &t.cf, {});
  std::vector<data::Sequence> inputs;
  for (const auto& us : t.split.users) inputs.emplace_back(us.train.begin(), us.train.end() - 1);
  auto vecs = rec.user_vectors(rec.user_reps(inputs));
  const auto& items = rec.item_vectors();
  std::size_t hits = 0;
  for (std::size_t k = 0; k < t.split.users.size(); ++k) {
    std::set<int> seen;
    for (const auto& e : t.ds.sequence(t.split.users[k].user)) seen.insert(e.item);
    const int target = t.split.users[k].train.back().item;
    std::vector<float> s{num::kernels::dot(vecs.row(k), items.row(static_cast<std::size_t>(target)), vecs.cols())};
    for (int i = 0; i < 10; ++i)
      if (!seen.count(i)) s.push_back(num::kernels::dot(vecs.row(k), items.row(static_cast<std::size_t>(i)), vecs.cols()));
    hits += eval::pessimistic_rank(s, 0) == 1;
  }
  return static_cast<double>(hits) / static_cast<double>(t.split.users.size());
}

// Mean cosine between f_CF-user(O_u) and f_user(h_u) over the training prefixes.
double head_alignment(const DistillModel<float>& m, const Toy& t) {
  DistillRecommender rec(m, t.ds, &t.cf, {});
  std::vector<data::Sequence> inputs;
  for (const auto& us : t.split.users) inputs.emplace_back(us.train.begin(), us.train.end() - 1);
  auto fu = rec.user_vectors(rec.user_reps(inputs));
  auto o = t.cf.user_reps(inputs);
  Tape<float> tape;
  auto fc = m.cf_head(tape, tape.view(o)).value();
  double cs = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < fu.cols(); ++c) {
      ab += double(fu.at(k, c)) * fc.at(k, c);
      aa += double(fu.at(k, c)) * fu.at(k, c);
      bb += double(fc.at(k, c)) * fc.at(k, c);
    }
    cs += ab / std::sqrt(aa * bb);
  }
  return cs / static_cast<double>(inputs.size());
}

// Encoder-side uniformity term on the training prefixes.
double encoder_uniformity(const DistillModel<float>& m, const Toy& t) {
  DistillRecommender rec(m, t.ds, &t.cf, {});
  std::vector<data::Sequence> inputs;
  for (const auto& us : t.split.users) inputs.emplace_back(us.train.begin(), us.train.end() - 1);
  auto fu = rec.user_vectors(rec.user_reps(inputs));
  Tape<float> tape;
  return uniformity_term(tape.view(fu)).item();
}

}  // namespace

TEST(Losses, RetrievalClosedForms) {
  Tensor<D> flat({100}, 0.37);
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_retrieval(t.view(flat)); }), std::log(100.0), 1e-9);
  Tensor<D> two({2}, std::vector<D>{1.0, 0.0});
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_retrieval(t.view(two)); }), 0.313262, 1e-6);
  Tensor<D> sat({3}, std::vector<D>{40.0, 0.0, -5.0});
  EXPECT_LT(value_of([&](Tape<D>& t) { return loss_retrieval(t.view(sat)); }), 1e-8);
  Tensor<D> huge({2}, std::vector<D>{1000.0, -1000.0});
  EXPECT_TRUE(std::isfinite(value_of([&](Tape<D>& t) { return loss_retrieval(t.view(huge)); })));
  Tensor<D> one({1}, 1.0);
  Tape<D> t;
  EXPECT_THROW(loss_retrieval(t.view(one)), Error);
}

TEST(Losses, MseClosedFormsAndOracle) {
  num::Rng rng(3);
  Tensor<D> a = rand_mat(5, 7, rng);
  EXPECT_EQ(value_of([&](Tape<D>& t) { return loss_distill_mse(t.view(a), t.view(a)); }), 0.0);
  Tensor<D> x({1, 2}, std::vector<D>{1.0, 0.0}), z({1, 2});
  EXPECT_DOUBLE_EQ(value_of([&](Tape<D>& t) { return loss_distill_mse(t.view(x), t.view(z)); }), 0.5);
  Tensor<D> b = rand_mat(5, 7, rng);
  double ref = 0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) ref += (a.at(i, j) - b.at(i, j)) * (a.at(i, j) - b.at(i, j));
  ref /= 35.0;
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_distill_mse(t.view(a), t.view(b)); }), ref, 1e-12);
}

TEST(Losses, UniformityClosedFormsAndOracle) {
  Tensor<D> ortho({2, 2}, std::vector<D>{1, 0, 0, 1});
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_uniform(t.view(ortho), t.view(ortho)); }), 2 * std::exp(-4.0), 1e-12);
  Tensor<D> same({3, 4}, 0.5);
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_uniform(t.view(same), t.view(same)); }), 2.0, 1e-12);
  Tensor<D> single({1, 4}, 1.0);
  EXPECT_EQ(value_of([&](Tape<D>& t) { return loss_uniform(t.view(single), t.view(single)); }), 0.0);

  num::Rng rng(8);
  Tensor<D> cf = rand_mat(8, 5, rng), us = rand_mat(8, 5, rng);
  auto brute = [](const Tensor<D>& m) {
    const std::size_t n = m.rows(), d = m.cols();
    std::vector<std::vector<D>> g(n, std::vector<D>(d));
    for (std::size_t i = 0; i < n; ++i) {
      D nn = 0;
      for (std::size_t c = 0; c < d; ++c) nn += m.at(i, c) * m.at(i, c);
      for (std::size_t c = 0; c < d; ++c) g[i][c] = m.at(i, c) / std::sqrt(nn);
    }
    D s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        D d2 = 0;
        for (std::size_t c = 0; c < d; ++c) d2 += (g[i][c] - g[j][c]) * (g[i][c] - g[j][c]);
        s += std::exp(-2 * d2);
      }
    return s / static_cast<D>(n * (n - 1));
  };
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_uniform(t.view(cf), t.view(us)); }), brute(cf) + brute(us), 1e-12);
}

TEST(Losses, ContrastiveClosedFormsAndOracle) {
  Tensor<D> zero({2, 3});
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_distill_contrastive(t.view(zero), t.view(zero)); }), std::log(2.0), 1e-12);
  Tensor<D> e({2, 2}, std::vector<D>{30, 0, 0, 30});
  EXPECT_LT(value_of([&](Tape<D>& t) { return loss_distill_contrastive(t.view(e), t.view(e)); }), 1e-8);
  num::Rng rng(9);
  Tensor<D> cf = rand_mat(6, 4, rng), us = rand_mat(6, 4, rng);
  D ref = 0;
  for (std::size_t u = 0; u < 6; ++u) {
    std::vector<D> s(6);
    for (std::size_t k = 0; k < 6; ++k)
      for (std::size_t c = 0; c < 4; ++c) s[k] += us.at(u, c) * cf.at(k, c);
    D z = 0;
    for (D v : s) z += std::exp(v);
    ref += -(s[u] - std::log(z));
  }
  EXPECT_NEAR(value_of([&](Tape<D>& t) { return loss_distill_contrastive(t.view(cf), t.view(us)); }), ref / 6, 1e-12);
}

TEST(Losses, TotalIsAdditive) {
  EXPECT_DOUBLE_EQ(loss_total(1.0, 0.5, 0.2).total, 1.7);
  EXPECT_EQ(loss_total(0, 0, 0).total, 0.0);
  try {
    loss_total(1.0, std::numeric_limits<double>::quiet_NaN(), 0.0);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("distill"), std::string::npos);
  }
  // Doubling one coefficient doubles exactly that contribution.
  ToyObjective toy(3);
  Tape<D> t;
  auto base = toy.build(t);
  LossWeights w;
  w.uniform = 2.0;
  auto dbl = toy.build(t, DistillKind::mse, w);
  EXPECT_NEAR(dbl.total.item() - base.total.item(), base.uniform.item(), 1e-12);
  const double sum = base.retrieval.item() + base.distill.item() + base.uniform.item();
  EXPECT_NEAR(base.total.item(), sum, 1e-6 * std::abs(sum));
  // Routing: the contrastive kind puts the in-batch loss in the distill slot.
  auto con = toy.build(t, DistillKind::contrastive);
  auto fu = toy.model.user_head(t, toy.model.user_hidden(t, toy.batch.user_prompts, toy.model.item_slots(t, t.view(toy.cf_items))));
  auto fc = toy.model.cf_head(t, t.view(toy.cf_users));
  EXPECT_EQ(con.distill.item(), loss_distill_contrastive(fc, fu).item());
  EXPECT_EQ(con.retrieval.item(), base.retrieval.item());
}

TEST(Score, DotProductOfHeads) {
  const float a[] = {1, 2}, b[] = {3, 4}, z[] = {0, 0};
  EXPECT_EQ(num::kernels::dot(a, b, 2), 11.0f);
  EXPECT_EQ(num::kernels::dot(a, z, 2), 0.0f);

  ToyObjective toy(5);
  num::Rng rng(6);
  Tensor<D> hu = rand_mat(1, 8, rng), hi = rand_mat(1, 8, rng);
  Tape<D> t;
  auto fa = toy.model.user_head(t, t.view(hu)).value();
  auto fb = toy.model.item_head(t, t.view(hi)).value();
  D ref = 0;
  for (std::size_t k = 0; k < 8; ++k) ref += fa[k] * fb[k];
  EXPECT_NEAR(toy.model.score(hu, hi), ref, 1e-12);
}

TEST(Score, BatchedEqualsPerPairBitwise) {
  ToyObjective toy(7);
  num::Rng rng(1);
  Tensor<D> hu = rand_mat(4, 8, rng), hi = rand_mat(5, 8, rng);
  Tape<D> t;
  auto s = num::matmul(toy.model.user_head(t, t.view(hu)), toy.model.item_head(t, t.view(hi)), true).value();
  for (std::size_t u = 0; u < 4; ++u)
    for (std::size_t i = 0; i < 5; ++i) {
      Tensor<D> a({1, 8}, std::vector<D>(hu.row(u), hu.row(u) + 8));
      Tensor<D> b({1, 8}, std::vector<D>(hi.row(i), hi.row(i) + 8));
      EXPECT_EQ(s.at(u, i), toy.model.score(a, b));
    }
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  EXPECT_LT(objective_gradcheck(11), 1e-4);
  EXPECT_LT(objective_gradcheck(12, DistillKind::contrastive), 1e-4);
  EXPECT_LT(objective_gradcheck(13, DistillKind::mse, true), 1e-4);
}

TEST(Model, TrainableCensus) {
  auto prefixes = [](const DistillModel<float>& m) {
    std::set<std::string> out;
    for (const auto& n : m.trainable_names()) out.insert(n.substr(0, n.find('.')));
    return out;
  };
  DistillModel<float> plain(small_encoder(), DistillConfig{16, 128, false, 0});
  EXPECT_EQ(prefixes(plain), (std::set<std::string>{"f_I", "f_user", "f_item", "f_CF-user", "special"}));
  DistillModel<float> with(small_encoder(), DistillConfig{16, 128, true, 0});
  EXPECT_EQ(prefixes(with), (std::set<std::string>{"f_I", "f_U", "f_user", "f_item", "f_CF-user", "special"}));
  // Each head is a 2-layer MLP whose hidden width equals its output width.
  EXPECT_EQ(plain.heads().get("f_user.0.weight").value.shape, (num::Shape{16, 128}));
  EXPECT_EQ(plain.heads().get("f_user.1.weight").value.shape, (num::Shape{128, 128}));
  EXPECT_EQ(plain.heads().get("f_CF-user.0.weight").value.shape, (num::Shape{16, 128}));
  EXPECT_EQ(plain.heads().get("f_I.1.weight").value.shape, (num::Shape{16, 16}));
}

TEST(Train, ExampleCountsPerRegime) {
  auto& t = toy();
  std::size_t ar = 0;
  for (const auto& us : t.split.users) ar += us.train.size() - 1;
  EXPECT_EQ(distill_examples(t.split, Regime::last_item).size(), t.split.users.size());
  EXPECT_EQ(distill_examples(t.split, Regime::auto_regressive).size(), ar);
  DistillModel<float> m(small_encoder(), DistillConfig{16, 32, false, 1});
  DistillTrainConfig c = toy_train_config();
  c.max_epochs = 1;
  c.regime = Regime::auto_regressive;
  auto res = train_distill(m, t.ds, t.split, t.cands, t.cf, c);
  EXPECT_EQ(res.examples_per_epoch, ar);
  EXPECT_EQ(res.steps, (ar + c.batch_size - 1) / c.batch_size);
  EXPECT_EQ(res.log_csv().substr(0, 55), "step,L_retrieval,L_distill,L_uniform,L_total,valid_ndcg");
}

TEST(Train, OnlyTrainableSetChanges) {
  auto& t = toy();
  DistillModel<float> m(small_encoder(), DistillConfig{16, 32, false, 1});
  const auto enc_before = m.encoder().params().snapshot();
  const auto heads_before = m.heads().snapshot();
  const auto cf_before = t.cf.params().snapshot();
  DistillTrainConfig c = toy_train_config();
  c.max_epochs = 5;
  train_distill(m, t.ds, t.split, t.cands, t.cf, c);
  std::set<std::string> changed;
  for (const auto* p : m.encoder().params().all())
    if (p->value.data != enc_before.at(p->name).data) changed.insert(p->name);
  for (const auto* p : m.heads().all())
    if (p->value.data != heads_before.at(p->name).data) changed.insert(p->name.substr(0, p->name.find('.')));
  EXPECT_EQ(changed, (std::set<std::string>{"special", "f_I", "f_user", "f_item", "f_CF-user"}));
  for (const auto& [name, v] : t.cf.params().snapshot()) EXPECT_EQ(v.data, cf_before.at(name).data) << name;
}

TEST(Train, MemorizesToy) {
  auto& t = toy();
  DistillModel<float> m(small_encoder(), DistillConfig{16, 32, false, 1});
  auto res = train_distill(m, t.ds, t.split, t.cands, t.cf, toy_train_config());
  EXPECT_GE(train_hr1(m, t), 0.9) << "steps " << res.steps;
}

TEST(Train, DistillAlignsAndUniformitySpreads) {
  auto& t = toy();
  DistillTrainConfig c = toy_train_config();
  c.max_epochs = 60;
  DistillModel<float> full(small_encoder(), DistillConfig{16, 32, false, 1});
  const double before = head_alignment(full, t);
  train_distill(full, t.ds, t.split, t.cands, t.cf, c);
  EXPECT_GT(head_alignment(full, t), before);

  DistillModel<float> no_uniform(small_encoder(), DistillConfig{16, 32, false, 1});
  c.weights.uniform = 0.0;
  train_distill(no_uniform, t.ds, t.split, t.cands, t.cf, c);
  EXPECT_LT(encoder_uniformity(full, t), encoder_uniformity(no_uniform, t));
}

TEST(Train, RejectsBadConfig) {
  auto& t = toy();
  DistillModel<float> m(small_encoder(), DistillConfig{16, 32, false, 1});
  DistillTrainConfig c;
  c.m_train = 0;
  EXPECT_THROW(train_distill(m, t.ds, t.split, t.cands, t.cf, c), Error);
  DistillModel<float> wrong(small_encoder(), DistillConfig{8, 32, false, 1});
  EXPECT_THROW(train_distill(wrong, t.ds, t.split, t.cands, t.cf, DistillTrainConfig{}), Error);
  EXPECT_THROW(parse_regime("sometimes"), Error);
  EXPECT_EQ(parse_regime("auto-regressive"), Regime::auto_regressive);
  EXPECT_THROW(parse_distill_kind("kl"), Error);
}
