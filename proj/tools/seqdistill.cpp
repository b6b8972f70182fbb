// seqdistill: data preparation, training, evaluation and diagnostics.
//
// Exit codes: 0 ok, 1 internal, 2 config/usage, 3 data, 4 numeric, 5 io.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "seqdistill/cli/checkpoint.hpp"
#include "seqdistill/cli/config.hpp"
#include "seqdistill/cli/report.hpp"
#include "seqdistill/data/subsets.hpp"
#include "seqdistill/distill/selfcheck.hpp"
#include "seqdistill/eval/diagnostics.hpp"
#include "seqdistill/num/selfcheck.hpp"

using namespace seqdistill;
using cli::json;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = "out";
  std::vector<std::string> formats{"csv", "json", "markdown"};
  bool deterministic = false;
  bool verbose = false;
};

struct Context {
  json cfg;
  std::string out;
  std::vector<cli::ReportFormat> formats;
  bool verbose = false;
  std::vector<std::string> inputs;  // blob hashes, in load order

  std::uint64_t seed() const { return cfg.at("seed"); }
  std::string path(const std::string& name) const { return out + "/" + name; }

  cli::ReportHeader header(const std::string& command, const std::string& cands = "") const {
    return {command, cli::config_hash(cfg), cli::inputs_hash(inputs), seed(), cands};
  }
  void report(const std::string& name, const cli::ReportHeader& h, const std::vector<cli::Table>& tables) const {
    cli::write_report(path(name), h, tables, cfg, formats);
    if (verbose) std::fprintf(stderr, "wrote %s.*\n", path(name).c_str());
  }
  eval::EvalOptions eval_options() const {
    eval::EvalOptions o;
    o.threads = cli::eval_threads(cfg);
    return o;
  }
};

struct Prepared {
  data::InteractionDataset ds;
  data::SplitSpec split;
  data::EvalCandidates cands;
};

data::InteractionDataset load_dataset(Context& ctx, const std::string& path) {
  if (path.empty()) fail(ErrorKind::config, "a dataset is required (--data)");
  ctx.inputs.push_back(cli::blob_hash(io::read_file(path)));
  data::InteractionDataset ds = data::ingest(path);
  if (ctx.cfg.at("data").at("five_core").get<bool>()) ds = data::five_core(ds, ctx.cfg.at("data").at("k"));
  if (ds.num_users() == 0) fail(ErrorKind::data, "dataset '" + path + "' is empty after filtering");
  return ds;
}

Prepared prepare(Context& ctx, const std::string& path) {
  Prepared p{load_dataset(ctx, path), {}, {}};
  p.split = data::split_leave_last_out(p.ds);
  p.cands = data::sample_eval_candidates(p.ds, p.split, ctx.cfg.at("data").at("negatives"),
                                         num::Rng(ctx.cfg.at("data").at("candidate_seed").get<std::uint64_t>()));
  return p;
}

cf::SasrecModel load_cf(Context& ctx, const std::string& path, const data::InteractionDataset& ds) {
  if (path.empty()) fail(ErrorKind::config, "a CF checkpoint is required (--cf)");
  auto ck = cli::load_checkpoint(path);
  ctx.inputs.push_back(ck.content_hash);
  auto m = cli::sasrec_from_checkpoint(ck, path);
  if (m.num_items() != ds.num_items())
    fail(ErrorKind::dependency, "CF checkpoint '" + path + "' covers " + std::to_string(m.num_items()) +
                                    " items but the dataset has " + std::to_string(ds.num_items()));
  return m;
}

// A loaded model plus whatever it borrows.
struct LoadedModel {
  std::unique_ptr<cf::SasrecModel> cf;
  std::unique_ptr<distill::DistillModel<float>> distill;
  std::unique_ptr<eval::Recommender> rec;
};

LoadedModel load_model(Context& ctx, const std::string& model_path, const std::string& cf_path,
                       const data::InteractionDataset& ds) {
  if (model_path.empty()) fail(ErrorKind::config, "a model checkpoint is required (--model)");
  auto ck = cli::load_checkpoint(model_path);
  LoadedModel lm;
  if (ck.kind == "sasrec") {
    ctx.inputs.push_back(ck.content_hash);
    lm.cf = std::make_unique<cf::SasrecModel>(cli::sasrec_from_checkpoint(ck, model_path));
    if (lm.cf->num_items() != ds.num_items()) fail(ErrorKind::dependency, "checkpoint and dataset disagree on item count");
    lm.rec = std::make_unique<eval::SasrecRecommender>(*lm.cf);
  } else if (ck.kind == "distill") {
    lm.cf = std::make_unique<cf::SasrecModel>(load_cf(ctx, cf_path, ds));
    ctx.inputs.push_back(ck.content_hash);
    lm.distill = std::make_unique<distill::DistillModel<float>>(cli::distill_from_checkpoint(ck, *lm.cf, model_path));
    lm.rec = std::make_unique<distill::DistillRecommender>(*lm.distill, ds, lm.cf.get(), cli::prompt_options(ctx.cfg));
  } else {
    fail(ErrorKind::data, "checkpoint '" + model_path + "' has unknown kind '" + ck.kind + "'");
  }
  return lm;
}

cli::Table stats_table(const data::InteractionDataset& ds) {
  return {"dataset",
          {"users", "items", "interactions"},
          {{std::to_string(ds.num_users()), std::to_string(ds.num_items()), std::to_string(ds.num_interactions())}}};
}

void write_labels(const Context& ctx, const data::InteractionDataset& ds) {
  const auto split = data::split_leave_last_out(ds);
  const auto mode = data::parse_transition_counting(ctx.cfg.at("eval").at("transition_counting"));
  io::atomic_write(ctx.path("transition.csv"), data::transition_csv(data::transition_scores(split, mode), ds));
  io::atomic_write(ctx.path("warm_cold.csv"),
                   data::warm_cold_csv(data::label_warm_cold(ds, split, ctx.cfg.at("eval").at("warm_cold_q")), ds));
}

// ---------------------------------------------------------------- commands

int cmd_ingest(Context& ctx, const std::string& input) {
  auto ds = load_dataset(ctx, input);
  data::write_jsonl(ds, ctx.path("dataset.jsonl"));
  write_labels(ctx, ds);
  ctx.report("ingest", ctx.header("ingest"), {stats_table(ds)});
  return 0;
}

int cmd_synth(Context& ctx) {
  auto ds = data::gen_markov(cli::markov_spec(ctx.cfg));
  data::write_jsonl(ds, ctx.path("dataset.jsonl"));
  write_labels(ctx, ds);
  ctx.report("synth", ctx.header("synth"), {stats_table(ds)});
  return 0;
}

std::unique_ptr<cf::SasrecModel> train_cf(const Context& ctx, const data::InteractionDataset& ds,
                                          const data::SplitSpec& split, const data::EvalCandidates& cands,
                                          cf::CfTrainResult* result = nullptr) {
  auto m = std::make_unique<cf::SasrecModel>(ds.num_items(), cli::sasrec_config(ctx.cfg));
  auto tc = cli::cf_train_config(ctx.cfg);
  tc.verbose = ctx.verbose;
  auto r = cf::train_sasrec(*m, ds, split, cands, tc);
  if (result) *result = std::move(r);
  return m;
}

int cmd_train_cf(Context& ctx, const std::string& data_path) {
  auto p = prepare(ctx, data_path);
  cf::CfTrainResult res;
  auto m = train_cf(ctx, p.ds, p.split, p.cands, &res);
  const std::string hash = cli::save_checkpoint(ctx.path("cf.ckpt"), cli::sasrec_checkpoint(*m, ctx.cfg));
  io::atomic_write(ctx.path("cf_log.csv"), res.log_csv());
  eval::SasrecRecommender rec(*m);
  auto r = eval::evaluate(rec, p.split, p.cands, cli::eval_phase(ctx.cfg), ctx.eval_options());
  ctx.report("cf_eval", ctx.header("train-cf", data::candidates_hash(p.cands)), {cli::eval_table("sasrec", {r})});
  std::printf("cf.ckpt %s\n", hash.c_str());
  return 0;
}

std::unique_ptr<distill::DistillModel<float>> train_distill(const Context& ctx, const Prepared& p,
                                                            const data::SplitSpec& split, const cf::SasrecModel& cf,
                                                            distill::DistillTrainResult* result = nullptr) {
  auto m = std::make_unique<distill::DistillModel<float>>(cli::encoder_config(ctx.cfg), cli::distill_config(ctx.cfg));
  auto tc = cli::distill_train_config(ctx.cfg);
  tc.verbose = ctx.verbose;
  auto r = distill::train_distill(*m, p.ds, split, p.cands, cf, tc);
  if (result) *result = std::move(r);
  return m;
}

int cmd_train_distill(Context& ctx, const std::string& data_path, const std::string& cf_path) {
  auto p = prepare(ctx, data_path);
  auto cf = load_cf(ctx, cf_path, p.ds);
  distill::DistillTrainResult res;
  auto m = train_distill(ctx, p, p.split, cf, &res);
  const std::string hash = cli::save_checkpoint(ctx.path("distill.ckpt"), cli::distill_checkpoint(*m, cf, ctx.cfg));
  io::atomic_write(ctx.path("distill_log.csv"), res.log_csv());
  distill::DistillRecommender rec(*m, p.ds, &cf, cli::prompt_options(ctx.cfg));
  auto r = eval::evaluate(rec, p.split, p.cands, cli::eval_phase(ctx.cfg), ctx.eval_options());
  ctx.report("distill_eval", ctx.header("train-distill", data::candidates_hash(p.cands)),
             {cli::eval_table("distill", {r})});
  std::printf("distill.ckpt %s\n", hash.c_str());
  return 0;
}

int cmd_eval(Context& ctx, const std::string& data_path, const std::string& model_path, const std::string& cf_path,
             bool with_bag) {
  auto p = prepare(ctx, data_path);
  auto lm = load_model(ctx, model_path, cf_path, p.ds);
  const auto phase = cli::eval_phase(ctx.cfg);
  std::vector<cli::Table> tables{
      cli::eval_table(lm.rec->kind(), {eval::evaluate(*lm.rec, p.split, p.cands, phase, ctx.eval_options())})};
  if (with_bag) {
    if (!lm.cf) fail(ErrorKind::config, "--bag needs a CF model");
    eval::BagRecommender bag(cf::BagModel::from_sasrec(*lm.cf));
    tables.push_back(cli::eval_table("bag", {eval::evaluate(bag, p.split, p.cands, phase, ctx.eval_options())}));
  }
  ctx.report("eval", ctx.header("eval", data::candidates_hash(p.cands)), tables);
  return 0;
}

int cmd_diag(Context& ctx, const std::string& mode, const std::string& data_path, const std::string& model_path,
             const std::string& cf_path, const std::string& target_path, bool with_bag) {
  static const std::vector<std::string> modes{"shuffle-train", "shuffle-infer", "rep-sim",
                                              "transition",    "warmcold",      "cross-domain"};
  if (std::find(modes.begin(), modes.end(), mode) == modes.end())
    fail(ErrorKind::config, "unknown diag mode '" + mode + "'");
  auto p = prepare(ctx, data_path);
  const auto phase = cli::eval_phase(ctx.cfg);
  const num::Rng shuffle_rng(ctx.cfg.at("eval").at("shuffle_seed").get<std::uint64_t>());
  const auto opt = ctx.eval_options();
  const std::string name = "diag_" + mode;
  auto header = [&] { return ctx.header("diag " + mode, data::candidates_hash(p.cands)); };

  if (mode == "shuffle-train") {
    // Without --model a SASRec is trained; with a distill checkpoint the
    // heads are retrained against its CF model.
    std::unique_ptr<cf::SasrecModel> cf;
    if (!cf_path.empty()) cf = std::make_unique<cf::SasrecModel>(load_cf(ctx, cf_path, p.ds));
    eval::TrainFn fn;
    if (cf) {
      fn = [&](const data::SplitSpec& s) -> std::unique_ptr<eval::Recommender> {
        struct Owning : distill::DistillRecommender {
          Owning(std::unique_ptr<distill::DistillModel<float>> m, const data::InteractionDataset& ds,
                 const cf::SasrecModel* cf, enc::PromptOptions o)
              : distill::DistillRecommender(*m, ds, cf, o), keep(std::move(m)) {}
          std::unique_ptr<distill::DistillModel<float>> keep;
        };
        return std::make_unique<Owning>(train_distill(ctx, p, s, *cf), p.ds, cf.get(), cli::prompt_options(ctx.cfg));
      };
    } else {
      fn = [&](const data::SplitSpec& s) -> std::unique_ptr<eval::Recommender> {
        struct Owning : eval::SasrecRecommender {
          explicit Owning(std::unique_ptr<cf::SasrecModel> m) : eval::SasrecRecommender(*m), keep(std::move(m)) {}
          std::unique_ptr<cf::SasrecModel> keep;
        };
        return std::make_unique<Owning>(train_cf(ctx, p.ds, s, p.cands));
      };
    }
    auto r = eval::shuffle_train(fn, p.split, p.cands, phase, shuffle_rng, opt);
    ctx.report(name, header(), {cli::shuffle_table({r})});
    return 0;
  }

  auto lm = load_model(ctx, model_path, cf_path, p.ds);
  std::vector<const eval::Recommender*> models{lm.rec.get()};
  std::unique_ptr<eval::BagRecommender> bag;
  if (with_bag) {
    if (!lm.cf) fail(ErrorKind::config, "--bag needs a CF model");
    bag = std::make_unique<eval::BagRecommender>(cf::BagModel::from_sasrec(*lm.cf));
    models.push_back(bag.get());
  }

  if (mode == "shuffle-infer" || mode == "rep-sim") {
    std::vector<eval::DiagnosticReport> reps;
    for (const auto* m : models)
      reps.push_back(mode == "shuffle-infer" ? eval::shuffle_infer(*m, p.split, p.cands, phase, shuffle_rng, opt)
                                             : eval::rep_sim_report(*m, p.split, phase, shuffle_rng, opt));
    std::vector<cli::Table> tables;
    if (mode == "shuffle-infer") tables.push_back(cli::shuffle_table(reps));
    tables.push_back(cli::similarity_table(reps));
    ctx.report(name, header(), tables);
    for (const auto& r : reps)
      io::atomic_write(ctx.path(name + "_" + r.model + "_hist.csv"), eval::histogram_csv(*r.similarity));
    return 0;
  }
  if (mode == "transition" || mode == "warmcold") {
    std::vector<cli::Table> tables;
    for (const auto* m : models) {
      std::vector<eval::EvalReport> reps;
      if (mode == "transition") {
        const auto labels = data::transition_scores(
            p.split, data::parse_transition_counting(ctx.cfg.at("eval").at("transition_counting")));
        reps = eval::transition_eval(*m, p.split, p.cands, phase, labels, opt);
      } else {
        reps = eval::warm_cold_eval(*m, p.split, p.cands, phase,
                                    data::label_warm_cold(p.ds, p.split, ctx.cfg.at("eval").at("warm_cold_q")), opt);
      }
      tables.push_back(cli::eval_table(m->kind(), reps));
    }
    ctx.report(name, header(), tables);
    return 0;
  }
  // cross-domain
  if (!lm.distill) fail(ErrorKind::config, "cross-domain evaluation needs a distill checkpoint");
  auto target = prepare(ctx, target_path);
  auto r = eval::cross_domain_eval(*lm.distill, target.ds, target.split, target.cands, cli::prompt_options(ctx.cfg), opt);
  ctx.report(name, ctx.header("diag cross-domain", data::candidates_hash(target.cands)),
             {cli::eval_table("distill", {r})});
  return 0;
}

int cmd_gradcheck(Context& ctx) {
  const double tol = 1e-4;
  cli::Table t{"gradcheck", {"case", "max_rel_error", "pass"}, {}};
  double worst = 0.0;
  auto add = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", err);
    t.rows.push_back({name, buf, err < tol ? "yes" : "no"});
  };
  for (const auto& r : selfcheck::check_all_primitives(ctx.seed())) add(r.name, r.max_rel_error);
  add("objective/mse", distill::objective_gradcheck(ctx.seed()));
  add("objective/contrastive", distill::objective_gradcheck(ctx.seed(), distill::DistillKind::contrastive));
  add("objective/user-rep", distill::objective_gradcheck(ctx.seed(), distill::DistillKind::mse, true));
  ctx.report("gradcheck", ctx.header("gradcheck"), {t});
  std::printf("max relative error %.3e\n", worst);
  if (!(worst < tol)) fail(ErrorKind::numeric, "gradient check exceeded tolerance");
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"seqdistill: sequential recommendation with a distilled text encoder"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--set", g.overrides, "override a config key, e.g. --set distill.regime=auto-regressive");
  auto* seed_opt = app.add_option("--seed", seed, "global seed");
  app.add_flag("--deterministic", g.deterministic, "single-threaded evaluation");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--format", g.formats, "report formats (csv, json, markdown)");
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  std::string input, data_path, model_path, cf_path, target_path, mode;
  bool with_bag = false, ablation = false;
  std::vector<std::string> flag_overrides;
  auto mirror = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        "--" + flag, [&flag_overrides, key](const std::string& v) { flag_overrides.push_back(key + "=" + v); }, help);
  };

  auto* ingest = app.add_subcommand("ingest", "read a JSONL interaction log, five-core filter, write dataset");
  ingest->add_option("--input", input, "interaction log (JSONL)")->required();

  auto* synth = app.add_subcommand("synth", "generate synthetic Markov sequences");
  mirror(synth, "p", "synth.p", "successor probability");
  mirror(synth, "users", "synth.users", "number of users");
  mirror(synth, "items", "synth.items", "number of items");
  mirror(synth, "len", "synth.len_min", "sequence length (sets len_min and len_max)");
  mirror(synth, "synth-seed", "synth.seed", "generator seed");

  auto* train_cf_cmd = app.add_subcommand("train-cf", "train the SASRec CF model");
  train_cf_cmd->add_option("--data", data_path, "dataset (JSONL)")->required();
  mirror(train_cf_cmd, "epochs", "cf.max_epochs", "maximum epochs");
  mirror(train_cf_cmd, "lr", "cf.lr", "learning rate");

  auto* train_distill_cmd = app.add_subcommand("train-distill", "train the distilled text-encoder recommender");
  train_distill_cmd->add_option("--data", data_path, "dataset (JSONL)")->required();
  train_distill_cmd->add_option("--cf", cf_path, "CF checkpoint")->required();
  train_distill_cmd->add_flag("--no-distill", ablation, "drop the distillation and uniformity losses");
  mirror(train_distill_cmd, "epochs", "distill.max_epochs", "maximum epochs");
  mirror(train_distill_cmd, "lr", "distill.lr", "learning rate");
  mirror(train_distill_cmd, "regime", "distill.regime", "last-item or auto-regressive");
  mirror(train_distill_cmd, "kind", "distill.kind", "mse or contrastive");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", data_path, "dataset (JSONL)")->required();
  eval_cmd->add_option("--model", model_path, "model checkpoint")->required();
  eval_cmd->add_option("--cf", cf_path, "CF checkpoint (distill models)");
  eval_cmd->add_flag("--bag", with_bag, "also evaluate the order-blind bag encoder");

  auto* diag = app.add_subcommand("diag", "diagnostic experiments");
  diag->add_option("mode", mode, "shuffle-train | shuffle-infer | rep-sim | transition | warmcold | cross-domain")
      ->required();
  diag->add_option("--data", data_path, "dataset (JSONL)")->required();
  diag->add_option("--model", model_path, "model checkpoint");
  diag->add_option("--cf", cf_path, "CF checkpoint");
  diag->add_option("--target", target_path, "target dataset for cross-domain");
  diag->add_flag("--bag", with_bag, "include the bag encoder");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every primitive and the objective");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return exit_code(ErrorKind::config);
  }

  std::vector<std::string> overrides = g.overrides;
  if (*seed_opt) overrides.push_back("seed=" + std::to_string(seed));
  if (g.deterministic) overrides.push_back("deterministic=true");
  for (const auto& o : flag_overrides) {
    overrides.push_back(o);
    if (o.rfind("synth.len_min=", 0) == 0) overrides.push_back("synth.len_max=" + o.substr(14));
  }
  if (ablation) {
    overrides.push_back("distill.weights.distill=0.0");
    overrides.push_back("distill.weights.uniform=0.0");
  }

  Context ctx;
  ctx.cfg = cli::load_config(g.config_path, overrides);
  ctx.out = g.out;
  ctx.verbose = g.verbose;
  for (const auto& f : g.formats) ctx.formats.push_back(cli::parse_report_format(f));
  if (!g.config_path.empty()) ctx.inputs.push_back(cli::blob_hash(io::read_file(g.config_path)));
  io::atomic_write(ctx.path("config.resolved.json"), ctx.cfg.dump(2) + "\n");

  if (*ingest) return cmd_ingest(ctx, input);
  if (*synth) return cmd_synth(ctx);
  if (*train_cf_cmd) return cmd_train_cf(ctx, data_path);
  if (*train_distill_cmd) return cmd_train_distill(ctx, data_path, cf_path);
  if (*eval_cmd) return cmd_eval(ctx, data_path, model_path, cf_path, with_bag);
  if (*diag) return cmd_diag(ctx, mode, data_path, model_path, cf_path, target_path, with_bag);
  if (*gradcheck) return cmd_gradcheck(ctx);
  return exit_code(ErrorKind::config);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
