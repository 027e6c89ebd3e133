// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "anchorcap/ablation.hpp"
#include "anchorcap/gradcheck.hpp"
#include "anchorcap/inference.hpp"
#include "anchorcap/metrics.hpp"
#include "anchorcap/model.hpp"
#include "anchorcap/trainer.hpp"

using namespace anchorcap;
using nn::Matrix;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int number, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << number << ' ' << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

// Runs one criterion; an exception counts as a failure with its message.
void criterion(int number, const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [ok, detail] = body();
    report(number, name, ok, detail);
  } catch (const std::exception& e) {
    report(number, name, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

std::string padded(const std::string& text) {
  std::string out = " ";
  for (const auto& w : tokenize(text)) out += w + " ";
  return out;
}

bool mentions(const std::string& caption, const std::string& text) {
  const std::string needle = padded(text);
  return needle.size() > 2 && padded(caption).find(needle) != std::string::npos;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

DatasetManifest overfit_corpus() {
  SynthConfig c = SynthConfig::defaults();
  c.n_scenes = 32;
  c.dims = ModelConfig::desk().features;
  return generate_synthetic(c, 7);
}

TrainConfig overfit_config() {
  TrainConfig t;
  t.batch_size = 8;
  t.iterations = 600;
  t.learning_rate = 1e-3;
  t.seed = 7;
  return t;
}

// 1 ------------------------------------------------------------------------

std::pair<bool, std::string> gradient_fidelity() {
  const std::vector<std::string> groups{"fusion.", "anpm.phi", "anpm.graph", "ancm.visual",
                                        "ancm.text", "ancm.f4",  "ancm.pointer"};
  bool ok = true;
  std::string detail;
  const auto start = std::chrono::steady_clock::now();
  for (GraphStrategy s : {GraphStrategy::sequence, GraphStrategy::independent, GraphStrategy::multiple}) {
    const GradcheckReport r = gradcheck_tiny(1, 200, s);
    int coords = 0;
    for (const auto& [g, n] : r.group_counts) coords += n;
    for (const auto& want : groups) {
      int n = 0;
      for (const auto& [g, count] : r.group_counts) n += g.rfind(want, 0) == 0 ? count : 0;
      if (n == 0) {
        ok = false;
        detail += "no coordinates in " + want + "; ";
      }
    }
    ok = ok && coords >= 200 && r.passed(1e-3);
    detail += to_string(s) + " " + std::to_string(coords) + " coords max rel err " + fmt(r.max_rel_error) + "; ";
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ok = ok && seconds < 60.0;
  return {ok, detail + "took " + fmt(seconds) + " s"};
}

// 2 ------------------------------------------------------------------------

std::pair<bool, std::string> causality() {
  ModelConfig config = ModelConfig::desk();
  config.weights = {1.0, 0.0, 1.0};  // L_vcap off
  SynthConfig synth = SynthConfig::defaults();
  synth.n_scenes = 2;
  synth.dims = config.features;
  const DatasetManifest data = generate_synthetic(synth, 11);
  AnchorCaptioner model(config, corpus_vocab(data, 1));
  const int vocab = model.vocab().size();
  const Scene& scene = data.scenes[0];
  const GroundTruthLabels gt = mine_ground_truth(scene, model.vocab(), config.max_caption);

  std::mt19937_64 rng(5);
  const int C = config.max_caption;
  double worst_visual = 0.0, worst_text = 0.0;
  int visual_steps = 0, text_steps = 0;
  {
    nn::Tape tape(false);
    const TrainingForward fwd = model.training_forward(tape, scene, gt, 0);
    const FusedFeatures& fused = fwd.fused;

    EncodedCaption teacher;
    teacher.ids.push_back(kBos);
    for (int c = 0; c < C; ++c) teacher.ids.push_back(4 + static_cast<int>(rng() % static_cast<unsigned>(vocab - 4)));
    teacher.copy_flags.assign(teacher.ids.size(), {});
    const Matrix base = model.ancm().visual_caption(tape, fused, &teacher).logits.value();
    for (int c = 0; c + 1 < base.rows(); ++c) {
      EncodedCaption changed = teacher;
      auto& id = changed.ids[static_cast<std::size_t>(c + 1)];
      id = id == 4 ? 5 : 4;
      const Matrix out = model.ancm().visual_caption(tape, fused, &changed).logits.value();
      worst_visual = std::max(worst_visual, max_abs_diff(out.topRows(c + 1), base.topRows(c + 1)));
      ++visual_steps;
    }

    const Var graph = fwd.acg->embedding;
    const Var hidden = fwd.visual.hidden;
    const int slots = static_cast<int>(graph.rows());
    TextTeacher t;
    t.inputs.push_back(DecodeToken::word(kBos));
    for (int c = 1; c < C; ++c) {
      t.inputs.push_back(rng() % 2 ? DecodeToken::copy(static_cast<int>(rng() % static_cast<unsigned>(slots)))
                                   : DecodeToken::word(4 + static_cast<int>(rng() % static_cast<unsigned>(vocab - 4))));
    }
    t.targets = Matrix::Zero(C, vocab + slots);
    const Matrix text_base = model.ancm().text_caption(tape, graph, hidden, &t).scores.value();
    for (int c = 0; c + 1 < C; ++c) {
      TextTeacher changed = t;
      auto& tok = changed.inputs[static_cast<std::size_t>(c + 1)];
      tok = tok.is_copy() ? DecodeToken::word(4) : DecodeToken::copy(0);
      const Matrix out = model.ancm().text_caption(tape, graph, hidden, &changed).scores.value();
      worst_text = std::max(worst_text, max_abs_diff(out.topRows(c + 1), text_base.topRows(c + 1)));
      ++text_steps;
    }
  }

  // Gradient reaching the visual captioner with L_vcap weighted out.
  auto loss = [&](bool grad) {
    nn::Tape tape(grad);
    const TrainingForward fwd = model.training_forward(tape, scene, gt, 0);
    if (grad) tape.backward(fwd.loss.total);
    return fwd.loss.total.scalar();
  };
  model.params().zero_grad();
  loss(true);
  double largest = 0.0, worst_fd = 0.0;
  for (auto& [path, p] : model.params().items()) {
    if (path.rfind("ancm.visual.", 0) != 0) continue;
    largest = std::max(largest, p.grad.cwiseAbs().maxCoeff());
    Eigen::Index idx = 0;
    Eigen::Map<const Eigen::VectorXd>(p.grad.data(), p.grad.size()).cwiseAbs().maxCoeff(&idx);
    const double saved = p.value.data()[idx];
    p.value.data()[idx] = saved + 1e-5;
    const double hi = loss(false);
    p.value.data()[idx] = saved - 1e-5;
    const double lo = loss(false);
    p.value.data()[idx] = saved;
    const double numeric = (hi - lo) / 2e-5;
    worst_fd = std::max(worst_fd, std::abs(p.grad.data()[idx] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  const bool ok = visual_steps == C - 1 && text_steps == C - 1 && worst_visual <= 1e-9 && worst_text <= 1e-9 &&
                  largest > 1e-8 && worst_fd <= 1e-3;
  return {ok, std::to_string(visual_steps) + " visual and " + std::to_string(text_steps) +
                  " text perturbations, max earlier-row change " + fmt(std::max(worst_visual, worst_text)) +
                  "; visual-stack grad under L_tcap alone max " + fmt(largest) + ", fd rel err " + fmt(worst_fd)};
}

// 3 ------------------------------------------------------------------------

// References x tokens nested loops, written independently of the library.
struct Mined {
  std::optional<int> anchor;
  std::vector<bool> graph;
  std::vector<int> counts;
  bool tie = false;
};

Mined mine_oracle(const Scene& scene) {
  const std::size_t m = scene.ocr_tokens.size();
  std::vector<std::vector<bool>> in(scene.references.size(), std::vector<bool>(m, false));
  Mined out;
  out.counts.assign(m, 0);
  out.graph.assign(m, false);
  for (std::size_t r = 0; r < scene.references.size(); ++r) {
    for (std::size_t k = 0; k < m; ++k) {
      in[r][k] = mentions(scene.references[r], scene.ocr_tokens[k].text);
      out.counts[k] += in[r][k] ? 1 : 0;
    }
  }
  const int best = m ? *std::max_element(out.counts.begin(), out.counts.end()) : 0;
  if (best == 0) return out;
  out.tie = std::count(out.counts.begin(), out.counts.end(), best) > 1;
  out.anchor = static_cast<int>(std::find(out.counts.begin(), out.counts.end(), best) - out.counts.begin());
  for (std::size_t r = 0; r < in.size(); ++r) {
    if (!in[r][static_cast<std::size_t>(*out.anchor)]) continue;
    for (std::size_t k = 0; k < m; ++k) out.graph[k] = out.graph[k] || in[r][k];
  }
  return out;
}

std::pair<bool, std::string> mining_oracle() {
  const std::vector<std::string> texts{"stop", "ahead", "exit", "new york", "cafe", "23", "open", "sale"};
  const std::vector<std::string> filler{"a", "sign", "red", "the", "says", "bus", "shop", "with", "near", "york"};
  std::mt19937_64 rng(2024);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  std::vector<Scene> scenes;
  for (int i = 0; i < 200; ++i) {
    Scene s;
    s.id = "m" + std::to_string(i);
    const int m = 1 + static_cast<int>(rng() % 5);
    for (int k = 0; k < m; ++k) {
      OcrToken t;
      t.text = pick(texts);
      s.ocr_tokens.push_back(t);
    }
    const int refs = 1 + static_cast<int>(rng() % 5);
    const bool silent = rng() % 6 == 0;  // references that never mention OCR text
    for (int r = 0; r < refs; ++r) {
      std::string ref;
      const int words = 2 + static_cast<int>(rng() % 6);
      for (int w = 0; w < words; ++w) {
        const bool ocr_word = !silent && rng() % 3 == 0;
        ref += (w ? " " : "") + (ocr_word ? pick(texts) : pick(filler));
      }
      s.references.push_back(ref);
    }
    scenes.push_back(std::move(s));
  }
  int mismatches = 0, ties = 0, without_anchor = 0;
  for (const auto& s : scenes) {
    const GroundTruthLabels got = mine_ground_truth(s, Vocabulary(), 30);
    const Mined want = mine_oracle(s);
    if (got.anchor != want.anchor || got.graph != want.graph || got.mention_counts != want.counts) ++mismatches;
    ties += want.tie ? 1 : 0;
    without_anchor += want.anchor ? 0 : 1;
  }
  const bool ok = mismatches == 0 && ties > 0 && without_anchor > 0;
  return {ok, std::to_string(mismatches) + " mismatches over 200 scenes (" + std::to_string(ties) + " ties, " +
                  std::to_string(without_anchor) + " without an anchor)"};
}

// 4 ------------------------------------------------------------------------

std::pair<bool, std::string> overfit(TrainingSession& session) {
  std::vector<double> totals;
  const std::clock_t start = std::clock();
  while (session.iteration() < session.config().iterations) totals.push_back(session.step().total);
  const double cpu = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
  const AnpmEvaluation anpm = evaluate_anpm(session.model(), session.examples());
  const double tokens = caption_token_accuracy(session.model(), session.examples());
  const double early = median({totals.begin(), totals.begin() + 100});
  const double later = median({totals.begin() + 100, totals.begin() + 200});
  const bool ok = session.config().iterations <= 2000 && anpm.anchor_accuracy >= 0.95 && anpm.graph_f1 >= 0.9 &&
                  tokens >= 0.9 && later < early && cpu <= 300.0;
  return {ok, std::to_string(totals.size()) + " iterations in " + fmt(cpu) + " CPU s; anchor acc " +
                  fmt(anpm.anchor_accuracy) + ", graph F1 " + fmt(anpm.graph_f1) + ", token acc " + fmt(tokens) +
                  ", median loss " + fmt(early) + " -> " + fmt(later)};
}

// 5 ------------------------------------------------------------------------

std::pair<bool, std::string> refinement(const AnchorCaptioner& model, const DatasetManifest& data,
                                        const std::vector<TrainingExample>& examples) {
  int visual_unk = 0, visual_clean = 0, with_anchor = 0, scored = 0;
  std::vector<GenerationResult> results;
  for (const auto& ex : examples) {
    const GenerationResult r = generate(model, *ex.scene, 1);
    results.push_back(r);
    visual_unk += r.visual_caption.find(kUnkText) != std::string::npos ? 1 : 0;
    bool leaked = false;
    for (const auto& t : ex.scene->ocr_tokens) leaked = leaked || mentions(r.visual_caption, t.text);
    visual_clean += leaked ? 0 : 1;
    if (!ex.gt.anchor || r.refined.empty()) continue;
    ++scored;
    const std::string& anchor_text = ex.scene->ocr_tokens[static_cast<std::size_t>(*ex.gt.anchor)].text;
    with_anchor += mentions(r.refined[0].caption, anchor_text) ? 1 : 0;
  }
  const MetricReport m = evaluate(results, data.scenes);
  const double n = static_cast<double>(examples.size());
  const double anchor_rate = scored ? with_anchor / static_cast<double>(scored) : 0.0;
  const bool ok = visual_unk / n >= 0.9 && visual_clean == static_cast<int>(examples.size()) && anchor_rate >= 0.9 &&
                  m.cider > m.cider_visual;
  return {ok, "visual captions with <unk> " + fmt(visual_unk / n) + ", free of OCR text " +
                  std::to_string(visual_clean) + "/" + std::to_string(examples.size()) +
                  "; refined with gt anchor " + fmt(anchor_rate) + "; CIDEr refined " + fmt(m.cider) +
                  " vs visual " + fmt(m.cider_visual)};
}

// 6 ------------------------------------------------------------------------

std::pair<bool, std::string> diversity(const AnchorCaptioner& model, const DatasetManifest& data) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& s : data.scenes) corpus.push_back(s.references);
  const CiderScorer scorer(corpus);
  double cr1 = 0.0, cr5 = 0.0, self5 = 0.0, self_copies = 0.0;
  int scenes = 0;
  for (const auto& s : data.scenes) {
    if (s.ocr_tokens.size() < 5) continue;
    const GenerationResult r = generate(model, s, 5);
    std::vector<std::string> captions;
    for (const auto& c : r.refined) captions.push_back(c.caption);
    cr1 += *cover_ratio({captions.front()}, s.ocr_tokens);
    cr5 += *cover_ratio(captions, s.ocr_tokens);
    self5 += self_cider(captions, scorer);
    self_copies += self_cider(std::vector<std::string>(5, captions.front()), scorer);
    ++scenes;
  }
  if (scenes == 0) return {false, "no scene with 5 OCR tokens"};
  cr1 /= scenes;
  cr5 /= scenes;
  self5 /= scenes;
  self_copies /= scenes;
  const bool ok = cr5 > cr1 && self5 > self_copies;
  return {ok, std::to_string(scenes) + " scenes; cover ratio K=1 " + fmt(cr1) + ", K=5 " + fmt(cr5) +
                  "; SelfCIDEr 5 refined " + fmt(self5) + " vs 5 copies " + fmt(self_copies)};
}

// 7 ------------------------------------------------------------------------

std::pair<bool, std::string> metric_units() {
  std::vector<std::string> bad;
  auto expect = [&](const std::string& what, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) bad.push_back(what + "=" + fmt(got));
  };
  expect("div1", div_n({"a b", "a b"}, 1), 0.5, 1e-12);
  expect("div2", div_n({"a b c", "a b d"}, 2), 0.75, 1e-12);
  expect("selfcider(ones)", self_cider_from_kernel(Matrix::Ones(3, 3)), 0.0, 1e-9);
  expect("selfcider(identity)", self_cider_from_kernel(Matrix::Identity(4, 4)), 1.0, 1e-9);
  Matrix half = Matrix::Constant(3, 3, 0.5);
  half.diagonal().setOnes();
  expect("selfcider(half)", self_cider_from_kernel(half), -std::log(2.0 / 3.0) / std::log(3.0), 1e-6);
  expect("selfcider(half)~0.369", self_cider_from_kernel(half), 0.369, 1e-3);
  const std::vector<std::string> refs{"a sign that says stop"};
  expect("cider", CiderScorer({refs}).score(refs[0], refs), 10.0, 1e-9);
  expect("bleu", bleu("the cat sat on the mat", {"the cat sat on the mat"}), 1.0, 1e-12);
  OcrToken stop, ahead;
  stop.text = "stop";
  ahead.text = "ahead";
  expect("cover", cover_ratio({"a stop sign"}, {stop, ahead}).value_or(-1.0), 0.5, 1e-12);
  std::string detail = bad.empty() ? "all unit values match" : "mismatched:";
  for (const auto& b : bad) detail += " " + b;
  return {bad.empty(), detail};
}

// 8 ------------------------------------------------------------------------

std::pair<bool, std::string> determinism(const DatasetManifest& data) {
  const fs::path root = fs::temp_directory_path() / "anchorcap_acceptance";
  fs::remove_all(root);
  TrainConfig cfg = overfit_config();
  cfg.iterations = 20;
  train(data, cfg, root / "a");
  train(data, cfg, root / "b");
  const bool ckpt = file_bytes(root / "a" / "checkpoint.json") == file_bytes(root / "b" / "checkpoint.json");

  std::string gen[2], metrics[2];
  for (int run = 0; run < 2; ++run) {
    const AnchorCaptioner model = load_model(root / (run ? "b" : "a") / "checkpoint.json");
    std::vector<GenerationResult> results;
    for (const auto& s : data.scenes) results.push_back(generate(model, s, 5));
    const fs::path out = root / ("gen" + std::to_string(run) + ".jsonl");
    write_generations(results, out);
    gen[run] = file_bytes(out);
    metrics[run] = to_json(evaluate(read_generations(out), data.scenes)).dump();
  }
  const bool ok = ckpt && !gen[0].empty() && gen[0] == gen[1] && metrics[0] == metrics[1];
  fs::remove_all(root);
  return {ok, std::string("checkpoints ") + (ckpt ? "identical" : "differ") + ", generations " +
                  (gen[0] == gen[1] ? "identical" : "differ") + ", metrics " +
                  (metrics[0] == metrics[1] ? "identical" : "differ")};
}

// 9 ------------------------------------------------------------------------

std::pair<bool, std::string> strategy_ablation_runs(const AnchorCaptioner& model, const DatasetManifest& data) {
  TrainConfig base = overfit_config();
  base.iterations = 60;
  const std::vector<AblationRow> learned = strategy_ablation(data, base, 5);
  const std::vector<AblationRow> rules = rule_ablation(model, data, 2, 3);
  bool ok = learned.size() == 3 && rules.size() == 6;
  std::string detail;
  for (const auto& rows : {learned, rules}) {
    for (const auto& r : rows) {
      const bool finite = std::isfinite(r.metrics.cider) && std::isfinite(r.metrics.bleu4) &&
                          r.metrics.images.size() == data.scenes.size();
      ok = ok && finite;
      detail += r.name + " CIDEr " + fmt(r.metrics.cider) + (r.anpm ? " F1 " + fmt(r.anpm->graph_f1) : "") + "; ";
    }
  }
  for (const auto& r : learned) ok = ok && r.anpm.has_value();
  return {ok, detail};
}

}  // namespace

int main() {
  criterion(1, "gradient fidelity", gradient_fidelity);
  criterion(2, "causality", causality);
  criterion(3, "mining oracle", mining_oracle);

  const DatasetManifest data = overfit_corpus();
  std::optional<TrainingSession> session;
  criterion(4, "overfit", [&] {
    session.emplace(data, overfit_config());
    return overfit(*session);
  });
  const bool trained = session && session->iteration() == session->config().iterations;
  auto needs_model = [&](auto body) {
    return [&, body]() -> std::pair<bool, std::string> {
      if (!trained) return {false, "overfit training did not finish"};
      return body();
    };
  };
  criterion(5, "refinement", needs_model([&] { return refinement(session->model(), data, session->examples()); }));
  criterion(6, "diversity", needs_model([&] { return diversity(session->model(), data); }));
  criterion(7, "metric unit values", metric_units);
  criterion(8, "determinism", [&] { return determinism(data); });
  criterion(9, "strategy ablation", needs_model([&] { return strategy_ablation_runs(session->model(), data); }));

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
