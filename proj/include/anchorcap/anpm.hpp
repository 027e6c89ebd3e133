#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "anchorcap/config.hpp"
#include "anchorcap/fusion.hpp"
#include "anchorcap/vocab.hpp"

namespace anchorcap {

// Softmax over the real (unpadded) tokens; padded entries hold 0.
struct AnchorScores {
  std::vector<double> scores;  // length M
  Var logits;                  // [1 x n_real], invalid when n_real == 0
  int n_real = 0;

  // No OCR tokens: the scene is skipped for anchoring.
  bool empty() const { return n_real == 0; }
};

enum class SelectMode { train, topk };

// train -> {argmax}; topk -> K best in descending score, K clipped to n_real.
// Ties go to the lower index.
std::vector<int> select_anchors(const AnchorScores& scores, SelectMode mode, int k = 1);

// Per-token graph scores for one anchor, in original token order.
struct GraphScores {
  Var logits;    // [1 x n_real]; s_graph = sigmoid(logits)
  Var features;  // T_graph, [n_real x d]
  std::vector<double> probs;
};

struct AnchorCentredGraph {
  int anchor = -1;
  std::vector<int> members;          // excludes the anchor, ascending
  std::vector<double> member_scores;  // s_graph over M tokens; 0 for pads
  Var embedding;                     // [(1 + |members|) x d]; row 0 is the anchor

  // Copy slot k -> OCR index (slot 0 is the anchor).
  std::vector<int> slots() const;
};

// Strategy interface for turning (T, anchor) into graph scores.
class GraphBuilder {
 public:
  virtual ~GraphBuilder() = default;
  virtual GraphStrategy strategy() const = 0;
  // tokens: real rows of T [n_real x d]; confidence: OCR confidence per real token.
  virtual GraphScores score(nn::Tape& tape, const Var& tokens, const std::vector<double>& confidence,
                            int anchor) const = 0;
};

std::unique_ptr<GraphBuilder> make_graph_builder(GraphStrategy strategy, nn::ParameterStore& store,
                                                 const ModelConfig& config, nn::Rng& rng);

// Token order used by the sequence builder: confidence descending, ties by index.
std::vector<int> confidence_order(const std::vector<double>& confidence);

class AnchorProposal {
 public:
  AnchorProposal() = default;
  AnchorProposal(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng);

  AnchorScores predict_anchor_scores(nn::Tape& tape, const FusedFeatures& fused) const;

  GraphScores graph_scores(nn::Tape& tape, const FusedFeatures& fused, const std::vector<double>& confidence,
                           int anchor) const;

  // Members are tokens other than the anchor with s_graph > threshold.
  AnchorCentredGraph build_acg(nn::Tape& tape, const FusedFeatures& fused, const std::vector<double>& confidence,
                               int anchor, double threshold) const;

  const GraphBuilder& builder() const { return *builder_; }

 private:
  int max_tokens_ = 0;
  nn::Affine anchor_head_;  // phi
  std::shared_ptr<GraphBuilder> builder_;
};

// {i != anchor : probs[i] > threshold}, ascending.
std::vector<int> graph_members(const std::vector<double>& probs, int anchor, double threshold);

// G = [T_anchor ; T_graph rows of the members].
AnchorCentredGraph assemble_acg(const FusedFeatures& fused, const GraphScores& scores, int anchor,
                                std::vector<int> members, int max_tokens);

std::vector<double> token_confidences(const Scene& scene);

struct GroundTruthLabels {
  std::optional<int> anchor;
  std::vector<bool> graph;         // per OCR token
  std::vector<int> mention_counts;  // references mentioning each token
  std::vector<CaptionTargets> targets;  // one per reference
};

// Anchor = token mentioned by the most references (ties -> lowest index);
// graph = tokens sharing at least one reference with the anchor.
// Throws std::invalid_argument when the scene has no references.
GroundTruthLabels mine_ground_truth(const Scene& scene, const Vocabulary& vocab, int max_words);

}  // namespace anchorcap
