#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anchorcap/anpm.hpp"
#include "anchorcap/config.hpp"
#include "anchorcap/fusion.hpp"
#include "anchorcap/vocab.hpp"

namespace anchorcap {

// One decoded position: either a common-vocabulary id or a copy of ACG slot k.
struct DecodeToken {
  int vocab_id = -1;
  int copy_slot = -1;

  static DecodeToken word(int id) { return {id, -1}; }
  static DecodeToken copy(int slot) { return {-1, slot}; }
  bool is_copy() const { return copy_slot >= 0; }
  bool operator==(const DecodeToken&) const = default;
};

struct VisualOutput {
  Var hidden;            // h_1..h_T  [T x d]
  Var logits;            // f4(h)     [T x |vocab|]
  std::vector<int> ids;  // y'_c = argmax f4(h_c)
};

// Teacher-forced inputs (BOS first) and multi-hot targets [T x (|vocab| + |G|)].
struct TextTeacher {
  std::vector<DecodeToken> inputs;
  nn::Matrix targets;
};

// slot_ocr maps copy slot k -> OCR index. A target word is positive on its
// vocabulary id (unless UNK) and on every slot whose OCR index it matches;
// UNK is positive only when nothing else is.
TextTeacher make_text_teacher(const EncodedCaption& full, const std::vector<int>& slot_ocr, int vocab_size);

struct TextOutput {
  Var scores;  // concat(f4(y_hat), pointer(G_hat, y_hat))  [T x (|vocab| + |G|)]
  std::vector<DecodeToken> tokens;
};

class AnchorCaptioning {
 public:
  AnchorCaptioning() = default;
  AnchorCaptioning(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng);

  // With a teacher: one pass over its ids (masked caption). Without: greedy
  // decoding until EOS or max_caption words.
  VisualOutput visual_caption(nn::Tape& tape, const FusedFeatures& fused, const EncodedCaption* teacher) const;

  // Vocabulary logits for the last position given a prefix starting with BOS.
  Var visual_step_logits(nn::Tape& tape, const FusedFeatures& fused, const std::vector<int>& prefix) const;

  // graph: ACG embedding (row 0 = anchor); hidden: visual-captioner states.
  TextOutput text_caption(nn::Tape& tape, const Var& graph, const Var& hidden, const TextTeacher* teacher) const;

  // Scores for the last position given a prefix of decode tokens.
  Var text_step_scores(nn::Tape& tape, const Var& graph, const Var& hidden,
                       const std::vector<DecodeToken>& prefix) const;

  // score[c][j] = (W_y y_c + b_y) . (W_g G_j + b_g)
  Var pointer_scores(nn::Tape& tape, const Var& graph_hat, const Var& y_hat) const;

  int vocab_size() const { return vocab_size_; }
  int max_caption() const { return max_caption_; }

 private:
  Var embed_words(nn::Tape& tape, const std::vector<int>& ids) const;
  Var embed_text_inputs(nn::Tape& tape, const std::vector<DecodeToken>& inputs, const Var& graph) const;
  Var run_visual(nn::Tape& tape, const FusedFeatures& fused, const std::vector<int>& inputs) const;
  // Returns {G_hat, y_hat}.
  std::pair<Var, Var> run_text(nn::Tape& tape, const Var& graph, const Var& hidden,
                               const std::vector<DecodeToken>& inputs) const;
  Var text_scores(nn::Tape& tape, const Var& graph_hat, const Var& y_hat) const;

  int dim_ = 0;
  int vocab_size_ = 0;
  int max_caption_ = 0;
  nn::Parameter* word_emb_ = nullptr;
  nn::Parameter* pos_emb_ = nullptr;
  nn::AttentionStack visual_stack_;  // theta_v
  nn::AttentionStack text_stack_;    // theta_t
  nn::Affine classifier_;            // f4, shared by both captioners
  nn::Affine pointer_graph_;         // W_g, b_g
  nn::Affine pointer_query_;         // W_y, b_y
};

std::string render_tokens(const std::vector<DecodeToken>& tokens, const Vocabulary& vocab,
                          const std::vector<std::string>& slot_text);

// ---------------------------------------------------------------------------
// Losses

struct LossBreakdown {
  double anchor = 0.0;
  double graph = 0.0;
  double vcap = 0.0;
  double tcap = 0.0;
  double total = 0.0;
};

struct LossTerms {
  Var anchor, graph, vcap, tcap, total;
  LossBreakdown values() const;
};

// Absent pieces (invalid Vars, no gt anchor) contribute 0.
struct LossInputs {
  Var anchor_logits;  // [1 x n_real]
  std::optional<int> gt_anchor;
  Var graph_logits;  // [1 x n_real]
  std::vector<bool> graph_targets;
  Var vocab_logits;  // [T x |vocab|]
  std::vector<int> vcap_targets;
  Var step_scores;  // [T x (|vocab| + |G|)]
  nn::Matrix tcap_targets;
};

// BCE everywhere: L_anchor on softmax scores vs one-hot, L_graph on sigmoid
// scores vs multi-hot (both summed over real tokens), L_vcap / L_tcap summed
// over classes and averaged over decode steps. Throws nn::NumericError on NaN.
LossTerms compute_losses(nn::Tape& tape, const LossInputs& in, const LossWeights& weights,
                         AnchorLossKind anchor_kind = AnchorLossKind::bce);

}  // namespace anchorcap
