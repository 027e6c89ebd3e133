#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anchorcap/model.hpp"
#include "anchorcap/scene_io.hpp"

namespace anchorcap {

struct TrainConfig {
  int batch_size = 8;
  int iterations = 2000;
  double learning_rate = 2e-4;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: final checkpoint only
  int min_freq = 1;          // vocabulary cutoff
  bool predicted_acg = false;
  ModelConfig model = ModelConfig::desk();

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
// Flat object; model keys (dim, strategy, alpha, ...) sit beside the training keys.
TrainConfig train_config_from_json(const nlohmann::json& j);
// JSON object, or flat key=value lines ('#' comments allowed).
TrainConfig load_train_config(const std::filesystem::path& path);

// u <- max(beta2 * u, |g|);  p <- p - lr / (1 - beta1^t) * m / (u + eps)
class Adamax {
 public:
  struct Moments {
    nn::Matrix m;
    nn::Matrix u;
  };

  explicit Adamax(double lr = 2e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(nn::ParameterStore& params);

  long long steps() const { return t_; }
  double learning_rate() const { return lr_; }
  std::map<std::string, Moments>& moments() { return state_; }
  const std::map<std::string, Moments>& moments() const { return state_; }
  void restore(long long t, std::map<std::string, Moments> state) {
    t_ = t;
    state_ = std::move(state);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, Moments> state_;
};

// Micro-averaged F1 over pooled per-token predictions.
struct F1Counts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;

  void add(const std::vector<bool>& predicted, const std::vector<bool>& truth);
  double f1() const;  // 1.0 when there is nothing to predict and nothing predicted
};

struct AnpmEvaluation {
  double anchor_accuracy = 0.0;
  double graph_f1 = 0.0;
  int scenes = 0;  // scenes with a mined anchor
};

struct TrainReport {
  std::vector<LossBreakdown> history;
  int start_iteration = 0;
  AnpmEvaluation anpm;
  double token_accuracy = 0.0;
  std::string checkpoint_path;
};

nlohmann::json to_json(const TrainReport& r);

// One training scene with its mined labels.
struct TrainingExample {
  const Scene* scene = nullptr;
  GroundTruthLabels gt;
};

// Labels for every scene with references, mined against `vocab`.
std::vector<TrainingExample> prepare_examples(const DatasetManifest& data, const Vocabulary& vocab, int max_words);

// Vocabulary over OCR-stripped references.
Vocabulary corpus_vocab(const DatasetManifest& data, int min_freq);

// Anchor accuracy (argmax vs mined anchor) and micro graph F1, where the
// predicted graph is {predicted anchor} + tokens scoring above the threshold
// for that anchor and the truth is the mined graph.
AnpmEvaluation evaluate_anpm(const AnchorCaptioner& model, const std::vector<TrainingExample>& examples);

// Teacher-forced text-captioner accuracy over every reference: a step is
// correct when its argmax hits any positive target.
double caption_token_accuracy(const AnchorCaptioner& model, const std::vector<TrainingExample>& examples);

// Model + optimizer + position in the sample stream. Batches are a pure
// function of (seed, iteration), so a restored session continues exactly.
class TrainingSession {
 public:
  TrainingSession(const DatasetManifest& data, TrainConfig config);

  // Reads a checkpoint written by save(); `data` must be the training corpus.
  static TrainingSession resume(const DatasetManifest& data, const std::filesystem::path& checkpoint);

  // Runs one iteration; throws nn::NumericError naming the iteration on NaN/Inf.
  LossBreakdown step();

  // Indices (into examples()) and reference choices for iteration `it`.
  std::vector<std::pair<int, int>> batch(int iteration) const;

  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  int iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }
  const AnchorCaptioner& model() const { return model_; }
  AnchorCaptioner& model() { return model_; }
  const std::vector<TrainingExample>& examples() const { return examples_; }
  const Adamax& optimizer() const { return optimizer_; }

 private:
  TrainingSession(const DatasetManifest& data, TrainConfig config, Vocabulary vocab);

  TrainConfig config_;
  AnchorCaptioner model_;
  std::vector<TrainingExample> examples_;
  Adamax optimizer_;
  int iteration_ = 0;
};

// Trains to config.iterations (continuing a resumed session), writing
// checkpoint.json under out_dir at the configured cadence and at the end.
TrainReport run_training(TrainingSession& session, const std::filesystem::path& out_dir,
                         const std::function<void(int, const LossBreakdown&)>& on_step = {});

TrainReport train(const DatasetManifest& data, const TrainConfig& config, const std::filesystem::path& out_dir);

// Loads only the model (config, vocabulary, weights) from a checkpoint.
AnchorCaptioner load_model(const std::filesystem::path& checkpoint);

}  // namespace anchorcap
