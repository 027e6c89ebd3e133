#include "anchorcap/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "anchorcap/ablation.hpp"
#include "anchorcap/gradcheck.hpp"
#include "anchorcap/inference.hpp"
#include "anchorcap/metrics.hpp"
#include "anchorcap/trainer.hpp"

#ifndef ANCHORCAP_BUILD_ID
#define ANCHORCAP_BUILD_ID "unknown"
#endif

namespace anchorcap::cli {

using nlohmann::json;

std::string build_id() { return ANCHORCAP_BUILD_ID; }

json to_json(const RunManifest& m) {
  return {{"command", m.command},   {"argv", m.argv},       {"config", m.config}, {"seed", m.seed},
          {"build_id", build_id()}, {"outputs", m.outputs}, {"started_at", m.started_at}};
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write run manifest " + path.string());
  out << to_json(m).dump(2) << '\n';
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Flag > config file > default.
template <typename T>
T resolve(const CLI::Option* opt, const T& flag_value, const json& file, const char* key, const T& fallback) {
  if (opt->count() > 0) return flag_value;
  if (file.contains(key)) {
    try {
      return file.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
  return fallback;
}

std::filesystem::path sidecar(const std::filesystem::path& out) { return out.string() + ".run.json"; }

void write_json(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct Context {
  std::vector<std::string> argv;
  std::ostream& out;
  std::ostream& err;

  RunManifest manifest(const std::string& command, json config, std::uint64_t seed,
                       std::vector<std::string> outputs) const {
    return {command, argv, std::move(config), seed, std::move(outputs), utc_now()};
  }
};

// ---------------------------------------------------------------------------

struct CommonFlags {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* app, bool out_required) {
    app->add_option("--config", config_path, "JSON or key=value config file");
    auto* o = app->add_option("--out", out, "output path");
    if (out_required) o->required();
    seed_opt = app->add_option("--seed", seed, "random seed");
  }

  json file() const { return config_path.empty() ? json::object() : load_flat_config(config_path); }
};

int cmd_synth(const Context& ctx, const CommonFlags& common, const CLI::App& app, int scenes, int objects, int tokens,
              int refs) {
  const json file = common.file();
  SynthConfig cfg = SynthConfig::defaults();
  cfg.n_scenes = resolve(app.get_option("--scenes"), scenes, file, "n_scenes", cfg.n_scenes);
  cfg.objects_per_scene = resolve(app.get_option("--objects"), objects, file, "objects_per_scene", cfg.objects_per_scene);
  cfg.tokens_per_scene = resolve(app.get_option("--tokens"), tokens, file, "tokens_per_scene", cfg.tokens_per_scene);
  cfg.refs_per_scene = resolve(app.get_option("--refs"), refs, file, "refs_per_scene", cfg.refs_per_scene);
  for (auto [key, field] : {std::pair{"d_app", &cfg.dims.d_app}, {"d_ft", &cfg.dims.d_ft}, {"d_phoc", &cfg.dims.d_phoc},
                            {"max_objects", &cfg.dims.max_objects}, {"max_tokens", &cfg.dims.max_tokens}}) {
    if (file.contains(key)) *field = file.at(key).get<int>();
  }
  const std::uint64_t seed = resolve<std::uint64_t>(common.seed_opt, common.seed, file, "seed", 0);

  const json resolved = {{"n_scenes", cfg.n_scenes},
                         {"objects_per_scene", cfg.objects_per_scene},
                         {"tokens_per_scene", cfg.tokens_per_scene},
                         {"refs_per_scene", cfg.refs_per_scene},
                         {"d_app", cfg.dims.d_app},
                         {"d_ft", cfg.dims.d_ft},
                         {"d_phoc", cfg.dims.d_phoc},
                         {"max_objects", cfg.dims.max_objects},
                         {"max_tokens", cfg.dims.max_tokens}};
  write_manifest(ctx.manifest("synth", resolved, seed, {common.out}), sidecar(common.out));
  const DatasetManifest data = generate_synthetic(cfg, seed);
  write_scenes(data, common.out);
  ctx.err << "synth: wrote " << data.scenes.size() << " scenes to " << common.out << '\n';
  return kExitOk;
}

int cmd_mine(const Context& ctx, const CommonFlags& common, const std::string& data_path, int min_freq) {
  const DatasetManifest data = load_scenes(data_path);
  if (!common.out.empty()) {
    write_manifest(ctx.manifest("mine-acg", {{"data", data_path}, {"min_freq", min_freq}}, 0, {common.out}),
                   sidecar(common.out));
  }
  const Vocabulary vocab = corpus_vocab(data, min_freq);
  std::ostringstream lines;
  int skipped = 0;
  for (const auto& scene : data.scenes) {
    json rec = {{"id", scene.id}, {"anchor", nullptr}, {"graph", json::array()}};
    if (!scene.references.empty()) {
      const GroundTruthLabels gt = mine_ground_truth(scene, vocab, ModelConfig::desk().max_caption);
      if (gt.anchor) {
        rec["anchor"] = scene.ocr_tokens[static_cast<std::size_t>(*gt.anchor)].text;
        for (std::size_t i = 0; i < gt.graph.size(); ++i) {
          if (gt.graph[i]) rec["graph"].push_back(scene.ocr_tokens[i].text);
        }
      }
    }
    skipped += rec["anchor"].is_null();
    lines << rec.dump() << '\n';
  }
  if (common.out.empty()) {
    ctx.out << lines.str();
  } else {
    std::ofstream f(common.out, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + common.out);
    f << lines.str();
  }
  ctx.err << "mine-acg: " << data.scenes.size() << " scenes, " << skipped << " without an anchor\n";
  return kExitOk;
}

struct TrainFlags {
  std::string data;
  std::string resume;
  int iterations = 0;
  int batch_size = 0;
  double lr = 0.0;
  std::string strategy;
};

TrainConfig resolve_train_config(const CommonFlags& common, const CLI::App& app, const TrainFlags& f) {
  json file = common.file();
  if (common.seed_opt->count() > 0) file["seed"] = common.seed;
  if (app.get_option("--iterations")->count() > 0) file["iterations"] = f.iterations;
  if (app.get_option("--batch-size")->count() > 0) file["batch_size"] = f.batch_size;
  if (app.get_option("--lr")->count() > 0) file["learning_rate"] = f.lr;
  if (app.get_option("--strategy")->count() > 0) file["strategy"] = f.strategy;
  return train_config_from_json(file);
}

int cmd_train(const Context& ctx, const CommonFlags& common, const CLI::App& app, const TrainFlags& f) {
  const DatasetManifest data = load_scenes(f.data);
  const std::filesystem::path out_dir = common.out;
  std::optional<TrainingSession> session;
  if (!f.resume.empty()) {
    session.emplace(TrainingSession::resume(data, f.resume));
  } else {
    session.emplace(data, resolve_train_config(common, app, f));
  }
  json resolved = to_json(session->config());
  resolved["data"] = f.data;
  if (!f.resume.empty()) resolved["resume"] = f.resume;
  write_manifest(ctx.manifest("train", resolved, session->config().seed,
                              {(out_dir / "checkpoint.json").string(), (out_dir / "report.json").string()}),
                 out_dir / "run_manifest.json");

  const auto started = std::chrono::steady_clock::now();
  const TrainReport report = run_training(*session, out_dir, [&](int it, const LossBreakdown& l) {
    if (it % 50 == 0) {
      ctx.err << "iter " << it << " total " << l.total << " (anchor " << l.anchor << ", graph " << l.graph
              << ", vcap " << l.vcap << ", tcap " << l.tcap << ")\n";
    }
  });
  write_json(to_json(report), out_dir / "report.json");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  ctx.err << "train: " << report.history.size() << " iterations in " << secs << " s; anchor acc "
          << report.anpm.anchor_accuracy << ", graph F1 " << report.anpm.graph_f1 << ", token acc "
          << report.token_accuracy << '\n';
  return kExitOk;
}

int cmd_generate(const Context& ctx, const CommonFlags& common, const CLI::App& app, const std::string& ckpt,
                 const std::string& data_path, int topk) {
  const json file = common.file();
  const int k = resolve(app.get_option("--topk"), topk, file, "topk", 1);
  if (k < 1) throw ConfigError("--topk must be >= 1");
  write_manifest(ctx.manifest("generate", {{"ckpt", ckpt}, {"data", data_path}, {"topk", k}}, 0, {common.out}),
                 sidecar(common.out));
  const AnchorCaptioner model = load_model(ckpt);
  const DatasetManifest data = load_scenes(data_path);
  std::vector<GenerationResult> results;
  for (const auto& scene : data.scenes) results.push_back(generate(model, scene, k));
  write_generations(results, common.out);
  ctx.err << "generate: " << results.size() << " scenes, K=" << k << '\n';
  return kExitOk;
}

int cmd_eval(const Context& ctx, const CommonFlags& common, const std::string& gen, const std::string& data_path,
             const std::string& source) {
  if (source != "generated" && source != "refs") throw ConfigError("--captions-from must be generated or refs");
  write_manifest(ctx.manifest("eval", {{"gen", gen}, {"data", data_path}, {"captions_from", source}}, 0, {common.out}),
                 sidecar(common.out));
  const auto results = read_generations(gen);
  const DatasetManifest data = load_scenes(data_path);
  const MetricReport report =
      evaluate(results, data.scenes, source == "refs" ? CaptionSource::references : CaptionSource::generated);
  write_json(to_json(report), common.out);
  ctx.err << "eval: BLEU-4 " << report.bleu4 << ", CIDEr " << report.cider << " (visual " << report.cider_visual
          << "), Div-1 " << report.div1 << ", Div-2 " << report.div2 << ", SelfCIDEr " << report.self_cider
          << ", CR " << report.cover_ratio << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx, const CommonFlags& common, const std::string& dims, int coords,
                  const std::string& strategy) {
  if (dims != "tiny") throw ConfigError("gradcheck supports --dims tiny only");
  if (coords < 1) throw ConfigError("--coords must be >= 1");
  const GraphStrategy s = parse_graph_strategy(strategy);
  if (!common.out.empty()) {
    write_manifest(ctx.manifest("gradcheck", {{"dims", dims}, {"coords", coords}, {"strategy", strategy}}, common.seed,
                                {common.out}),
                   sidecar(common.out));
  }
  const GradcheckReport report = gradcheck_tiny(common.seed, coords, s);
  ctx.out << "max relative error " << report.max_rel_error << " over " << report.entries.size() << " coordinates\n";
  if (!common.out.empty()) {
    json entries = json::array();
    for (const auto& e : report.entries) {
      entries.push_back({{"param", e.param},
                         {"index", e.index},
                         {"analytic", e.analytic},
                         {"numeric", e.numeric},
                         {"rel_error", e.rel_error}});
    }
    write_json({{"max_rel_error", report.max_rel_error}, {"groups", report.group_counts}, {"entries", entries}},
               common.out);
  }
  return report.passed() ? kExitOk : kExitNumeric;
}

int cmd_ablate(const Context& ctx, const CommonFlags& common, const CLI::App& app, const TrainFlags& f,
               const std::string& ckpt, int topk, int k_around, bool skip_strategies) {
  const DatasetManifest data = load_scenes(f.data);
  const TrainConfig config = resolve_train_config(common, app, f);
  json resolved = to_json(config);
  resolved["data"] = f.data;
  resolved["ckpt"] = ckpt;
  resolved["topk"] = topk;
  resolved["k_around"] = k_around;
  write_manifest(ctx.manifest("ablate", resolved, config.seed, {common.out}), sidecar(common.out));

  json out = json::object();
  if (!skip_strategies) out["strategies"] = to_json(strategy_ablation(data, config, topk));
  if (!ckpt.empty()) out["rules"] = to_json(rule_ablation(load_model(ckpt), data, k_around, config.seed));
  write_json(out, common.out);
  ctx.err << "ablate: wrote " << common.out << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Context ctx{std::vector<std::string>(argv, argv + argc), out, err};
  CLI::App app{"Anchor-centred text-based image captioning", "anchorcap"};
  app.require_subcommand(1);

  CommonFlags synth_common;
  int scenes = 0, objects = 0, tokens = 0, refs = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene corpus");
  synth_common.attach(synth, true);
  synth->add_option("--scenes", scenes, "number of scenes");
  synth->add_option("--objects", objects, "visual objects per scene");
  synth->add_option("--tokens", tokens, "OCR tokens per scene");
  synth->add_option("--refs", refs, "reference captions per scene");

  CommonFlags mine_common;
  std::string mine_data;
  int min_freq = 1;
  auto* mine = app.add_subcommand("mine-acg", "audit mined anchors and graphs as JSONL");
  mine_common.attach(mine, false);
  mine->add_option("--data", mine_data, "scene file")->required();
  mine->add_option("--min-freq", min_freq, "vocabulary frequency cutoff");

  CommonFlags train_common;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_common.attach(train_cmd, true);
  train_cmd->get_option("--config")->required();
  train_cmd->add_option("--data", train_flags.data, "training scene file")->required();
  train_cmd->add_option("--resume", train_flags.resume, "checkpoint to continue from");
  train_cmd->add_option("--iterations", train_flags.iterations, "total iterations");
  train_cmd->add_option("--batch-size", train_flags.batch_size, "scenes per iteration");
  train_cmd->add_option("--lr", train_flags.lr, "learning rate");
  train_cmd->add_option("--strategy", train_flags.strategy, "sequence|independent|multiple");

  CommonFlags gen_common;
  std::string gen_ckpt, gen_data;
  int topk = 1;
  auto* gen = app.add_subcommand("generate", "caption scenes with a trained model");
  gen_common.attach(gen, true);
  gen->add_option("--ckpt", gen_ckpt, "checkpoint")->required();
  gen->add_option("--data", gen_data, "scene file")->required();
  gen->add_option("--topk", topk, "anchors per scene");

  CommonFlags eval_common;
  std::string eval_gen, eval_data, captions_from = "generated";
  auto* eval = app.add_subcommand("eval", "score generated captions");
  eval_common.attach(eval, true);
  eval->add_option("--gen", eval_gen, "generation JSONL")->required();
  eval->add_option("--data", eval_data, "scene file")->required();
  eval->add_option("--captions-from", captions_from, "generated|refs");

  CommonFlags grad_common;
  std::string dims = "tiny", grad_strategy = "sequence";
  int coords = 200;
  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  grad_common.attach(grad, false);
  grad->add_option("--dims", dims, "model size (tiny)");
  grad->add_option("--coords", coords, "coordinates to check");
  grad->add_option("--strategy", grad_strategy, "graph builder");

  CommonFlags ablate_common;
  TrainFlags ablate_flags;
  std::string ablate_ckpt;
  int ablate_topk = 1, k_around = kDefaultAround;
  bool skip_strategies = false;
  auto* ablate = app.add_subcommand("ablate", "graph-strategy and rule-based ACG comparisons");
  ablate_common.attach(ablate, true);
  ablate->add_option("--data", ablate_flags.data, "scene file")->required();
  ablate->add_option("--ckpt", ablate_ckpt, "model for the rule-based rows");
  ablate->add_option("--iterations", ablate_flags.iterations, "iterations per strategy");
  ablate->add_option("--batch-size", ablate_flags.batch_size, "scenes per iteration");
  ablate->add_option("--lr", ablate_flags.lr, "learning rate");
  ablate->add_option("--strategy", ablate_flags.strategy, "ignored; every strategy runs");
  ablate->add_option("--topk", ablate_topk, "anchors per scene");
  ablate->add_option("--k-around", k_around, "tokens grouped by the around/random rules");
  ablate->add_flag("--skip-strategies", skip_strategies, "only run the rule-based rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitValidation;
  }

  try {
    if (*synth) return cmd_synth(ctx, synth_common, *synth, scenes, objects, tokens, refs);
    if (*mine) return cmd_mine(ctx, mine_common, mine_data, min_freq);
    if (*train_cmd) return cmd_train(ctx, train_common, *train_cmd, train_flags);
    if (*gen) return cmd_generate(ctx, gen_common, *gen, gen_ckpt, gen_data, topk);
    if (*eval) return cmd_eval(ctx, eval_common, eval_gen, eval_data, captions_from);
    if (*grad) return cmd_gradcheck(ctx, grad_common, dims, coords, grad_strategy);
    if (*ablate) {
      return cmd_ablate(ctx, ablate_common, *ablate, ablate_flags, ablate_ckpt, ablate_topk, k_around, skip_strategies);
    }
  } catch (const nn::NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace anchorcap::cli
