#include "anchorcap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace anchorcap {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

json to_json(const TrainConfig& c) {
  json j = to_json(c.model);
  j["batch_size"] = c.batch_size;
  j["iterations"] = c.iterations;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["min_freq"] = c.min_freq;
  j["predicted_acg"] = c.predicted_acg;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  c.model = model_config_from_json(j);
  try {
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<int>();
    if (j.contains("min_freq")) c.min_freq = j.at("min_freq").get<int>();
    if (j.contains("predicted_acg")) c.predicted_acg = j.at("predicted_acg").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(c.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (c.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (c.min_freq < 1) throw ConfigError("min_freq must be >= 1");
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) { return train_config_from_json(load_flat_config(path)); }

// ---------------------------------------------------------------------------
// Optimizer

void Adamax::step(nn::ParameterStore& params) {
  ++t_;
  const double step_size = lr_ / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
  for (auto& [path, p] : params.items()) {
    auto [it, fresh] = state_.try_emplace(path);
    Moments& s = it->second;
    if (fresh) {
      s.m = nn::Matrix::Zero(p.value.rows(), p.value.cols());
      s.u = nn::Matrix::Zero(p.value.rows(), p.value.cols());
    }
    s.m = beta1_ * s.m + (1.0 - beta1_) * p.grad;
    s.u = (beta2_ * s.u).cwiseMax(p.grad.cwiseAbs());
    p.value.array() -= step_size * s.m.array() / (s.u.array() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

void F1Counts::add(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  const std::size_t n = std::max(predicted.size(), truth.size());
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = i < predicted.size() && predicted[i];
    const bool t = i < truth.size() && truth[i];
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
}

double F1Counts::f1() const {
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

Vocabulary corpus_vocab(const DatasetManifest& data, int min_freq) {
  std::vector<std::string> captions;
  for (const auto& s : data.scenes) {
    for (const auto& r : s.references) captions.push_back(strip_ocr_words(r, s.ocr_tokens));
  }
  return build_vocab(captions, min_freq);
}

std::vector<TrainingExample> prepare_examples(const DatasetManifest& data, const Vocabulary& vocab, int max_words) {
  std::vector<TrainingExample> out;
  for (const auto& s : data.scenes) {
    if (s.references.empty()) continue;
    out.push_back({&s, mine_ground_truth(s, vocab, max_words)});
  }
  return out;
}

AnpmEvaluation evaluate_anpm(const AnchorCaptioner& model, const std::vector<TrainingExample>& examples) {
  AnpmEvaluation ev;
  F1Counts counts;
  int correct = 0;
  for (const auto& ex : examples) {
    if (!ex.gt.anchor) continue;
    nn::Tape tape(false);
    const FusedFeatures fused = model.fusion()(tape, *ex.scene);
    const AnchorScores scores = model.anpm().predict_anchor_scores(tape, fused);
    const int anchor = select_anchors(scores, SelectMode::train).front();
    ++ev.scenes;
    correct += anchor == *ex.gt.anchor;
    const AnchorCentredGraph acg =
        model.anpm().build_acg(tape, fused, token_confidences(*ex.scene), anchor, model.config().graph_threshold);
    std::vector<bool> predicted(ex.gt.graph.size(), false);
    for (int k : acg.slots()) predicted[static_cast<std::size_t>(k)] = true;
    counts.add(predicted, ex.gt.graph);
  }
  if (ev.scenes > 0) ev.anchor_accuracy = static_cast<double>(correct) / ev.scenes;
  ev.graph_f1 = counts.f1();
  return ev;
}

double caption_token_accuracy(const AnchorCaptioner& model, const std::vector<TrainingExample>& examples) {
  long long correct = 0;
  long long total = 0;
  for (const auto& ex : examples) {
    for (std::size_t r = 0; r < ex.gt.targets.size(); ++r) {
      nn::Tape tape(false);
      const TrainingForward f = model.training_forward(tape, *ex.scene, ex.gt, static_cast<int>(r));
      if (!f.teacher) continue;
      const nn::Matrix& targets = f.teacher->targets;
      const nn::Matrix& scores = f.text.scores.value();
      for (Eigen::Index s = 0; s < scores.rows(); ++s) {
        Eigen::Index best = 0;
        scores.row(s).maxCoeff(&best);
        correct += targets(s, best) > 0.5;
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Session

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

std::vector<int> epoch_order(std::uint64_t seed, std::uint64_t epoch, int n) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t state = mix(seed, 0x5eedULL, epoch);
  for (int i = n - 1; i > 0; --i) {
    state = splitmix64(state);
    std::swap(order[static_cast<std::size_t>(i)], order[state % static_cast<std::uint64_t>(i + 1)]);
  }
  return order;
}

json shape_json(const nn::Matrix& m) {
  return json::array({m.rows(), m.cols()});
}

json values_json(const nn::Matrix& m) { return json(std::vector<double>(m.data(), m.data() + m.size())); }

nn::Matrix matrix_from(const json& shape, const json& values, const std::string& what) {
  const auto rows = shape.at(0).get<Eigen::Index>();
  const auto cols = shape.at(1).get<Eigen::Index>();
  const auto v = values.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw ConfigError("checkpoint: bad value count for " + what);
  nn::Matrix m(rows, cols);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

constexpr const char* kCheckpointFormat = "anchorcap-checkpoint";
constexpr int kCheckpointVersion = 1;

json read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw ConfigError(path.string() + " is not a checkpoint");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
  }
  return j;
}

void load_params(nn::ParameterStore& store, const json& params) {
  for (auto& [path, p] : store.items()) {
    if (!params.contains(path)) throw ConfigError("checkpoint lacks parameter " + path);
    const json& entry = params.at(path);
    nn::Matrix m = matrix_from(entry.at("shape"), entry.at("values"), path);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw ConfigError("checkpoint shape mismatch for " + path);
    }
    p.value = std::move(m);
  }
}

}  // namespace

TrainingSession::TrainingSession(const DatasetManifest& data, TrainConfig config)
    : TrainingSession(data, config, corpus_vocab(data, config.min_freq)) {}

TrainingSession::TrainingSession(const DatasetManifest& data, TrainConfig config, Vocabulary vocab)
    : config_(std::move(config)),
      model_(config_.model, std::move(vocab)),
      optimizer_(config_.learning_rate) {
  config_.model = model_.config();
  if (config_.model.features.d_app != data.dims.d_app || config_.model.features.d_ft != data.dims.d_ft ||
      config_.model.features.d_phoc != data.dims.d_phoc) {
    throw ConfigError("model feature widths do not match the dataset header");
  }
  examples_ = prepare_examples(data, model_.vocab(), config_.model.max_caption);
  const bool minable = std::any_of(examples_.begin(), examples_.end(), [](const auto& e) { return e.gt.anchor.has_value(); });
  if (!minable) throw ConfigError("training data has no scene with a minable anchor");
}

std::vector<std::pair<int, int>> TrainingSession::batch(int iteration) const {
  const int n = static_cast<int>(examples_.size());
  std::vector<std::pair<int, int>> out;
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<int> order;
  for (int b = 0; b < config_.batch_size; ++b) {
    const auto pos = static_cast<std::uint64_t>(iteration) * static_cast<std::uint64_t>(config_.batch_size) +
                     static_cast<std::uint64_t>(b);
    const std::uint64_t epoch = pos / static_cast<std::uint64_t>(n);
    if (epoch != cached_epoch) {
      order = epoch_order(config_.seed, epoch, n);
      cached_epoch = epoch;
    }
    const int scene = order[pos % static_cast<std::uint64_t>(n)];
    const auto refs = static_cast<std::uint64_t>(examples_[static_cast<std::size_t>(scene)].gt.targets.size());
    const int ref = static_cast<int>(mix(config_.seed, 0x7efULL + static_cast<std::uint64_t>(iteration),
                                         static_cast<std::uint64_t>(b)) % refs);
    out.emplace_back(scene, ref);
  }
  std::sort(out.begin(), out.end());
  return out;
}

LossBreakdown TrainingSession::step() {
  nn::ParameterStore& params = model_.params();
  params.zero_grad();
  LossBreakdown mean;
  const auto items = batch(iteration_);
  const double inv = 1.0 / static_cast<double>(items.size());
  try {
    for (const auto& [scene, ref] : items) {
      const TrainingExample& ex = examples_[static_cast<std::size_t>(scene)];
      nn::Tape tape;
      TrainingForward f = model_.training_forward(tape, *ex.scene, ex.gt, ref, config_.predicted_acg);
      tape.backward(nn::scale(f.loss.total, inv));
      const LossBreakdown v = f.loss.values();
      mean.anchor += v.anchor * inv;
      mean.graph += v.graph * inv;
      mean.vcap += v.vcap * inv;
      mean.tcap += v.tcap * inv;
      mean.total += v.total * inv;
    }
  } catch (const nn::NumericError& e) {
    throw nn::NumericError("iteration " + std::to_string(iteration_) + ": " + e.what());
  }
  if (!std::isfinite(mean.total)) throw nn::NumericError("iteration " + std::to_string(iteration_) + ": non-finite loss");
  optimizer_.step(params);
  ++iteration_;
  return mean;
}

std::string TrainingSession::serialize() const {
  json params = json::object();
  for (const auto& [path, p] : model_.params().items()) {
    params[path] = {{"shape", shape_json(p.value)}, {"values", values_json(p.value)}};
  }
  json m = json::object();
  json u = json::object();
  for (const auto& [path, s] : optimizer_.moments()) {
    m[path] = values_json(s.m);
    u[path] = values_json(s.u);
  }
  json j = {
      {"format", kCheckpointFormat},
      {"version", kCheckpointVersion},
      {"train_config", to_json(config_)},
      {"vocab", model_.vocab().words()},
      {"iteration", iteration_},
      {"params", std::move(params)},
      {"optimizer", {{"t", optimizer_.steps()}, {"m", std::move(m)}, {"u", std::move(u)}}},
  };
  return j.dump();
}

void TrainingSession::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out << serialize();
  }
  std::filesystem::rename(tmp, path);
}

TrainingSession TrainingSession::resume(const DatasetManifest& data, const std::filesystem::path& checkpoint) {
  const json j = read_checkpoint(checkpoint);
  TrainingSession s(data, train_config_from_json(j.at("train_config")),
                    Vocabulary(j.at("vocab").get<std::vector<std::string>>()));
  load_params(s.model_.params(), j.at("params"));
  std::map<std::string, Adamax::Moments> moments;
  const json& opt = j.at("optimizer");
  for (const auto& [path, p] : s.model_.params().items()) {
    if (!opt.at("m").contains(path)) continue;
    const json shape = shape_json(p.value);
    moments[path] = {matrix_from(shape, opt.at("m").at(path), path), matrix_from(shape, opt.at("u").at(path), path)};
  }
  s.optimizer_.restore(opt.at("t").get<long long>(), std::move(moments));
  s.iteration_ = j.at("iteration").get<int>();
  return s;
}

AnchorCaptioner load_model(const std::filesystem::path& checkpoint) {
  const json j = read_checkpoint(checkpoint);
  const TrainConfig config = train_config_from_json(j.at("train_config"));
  AnchorCaptioner model(config.model, Vocabulary(j.at("vocab").get<std::vector<std::string>>()));
  load_params(model.params(), j.at("params"));
  return model;
}

// ---------------------------------------------------------------------------
// Driver

json to_json(const TrainReport& r) {
  json history = json::array();
  for (const auto& h : r.history) {
    history.push_back({{"anchor", h.anchor}, {"graph", h.graph}, {"vcap", h.vcap}, {"tcap", h.tcap}, {"total", h.total}});
  }
  return {
      {"start_iteration", r.start_iteration},
      {"history", std::move(history)},
      {"anchor_accuracy", r.anpm.anchor_accuracy},
      {"graph_f1", r.anpm.graph_f1},
      {"anchor_scenes", r.anpm.scenes},
      {"token_accuracy", r.token_accuracy},
      {"checkpoint", r.checkpoint_path},
  };
}

TrainReport run_training(TrainingSession& session, const std::filesystem::path& out_dir,
                         const std::function<void(int, const LossBreakdown&)>& on_step) {
  TrainReport report;
  report.start_iteration = session.iteration();
  const std::filesystem::path ckpt = out_dir / "checkpoint.json";
  const int every = session.config().checkpoint_every;
  while (session.iteration() < session.config().iterations) {
    const int it = session.iteration();
    report.history.push_back(session.step());
    if (on_step) on_step(it, report.history.back());
    if (every > 0 && session.iteration() % every == 0) session.save(ckpt);
  }
  session.save(ckpt);
  report.checkpoint_path = ckpt.string();
  report.anpm = evaluate_anpm(session.model(), session.examples());
  report.token_accuracy = caption_token_accuracy(session.model(), session.examples());
  return report;
}

TrainReport train(const DatasetManifest& data, const TrainConfig& config, const std::filesystem::path& out_dir) {
  TrainingSession session(data, config);
  return run_training(session, out_dir);
}

}  // namespace anchorcap
