#include "anchorcap/ancm.hpp"

#include <algorithm>
#include <cmath>

namespace anchorcap {

TextTeacher make_text_teacher(const EncodedCaption& full, const std::vector<int>& slot_ocr, int vocab_size) {
  const std::size_t len = full.ids.size();
  if (len < 2 || full.ids.front() != kBos) throw std::invalid_argument("teacher caption must be BOS-framed");
  const int n_slots = static_cast<int>(slot_ocr.size());

  auto matching_slots = [&](std::size_t p) {
    std::vector<int> slots;
    if (p >= full.copy_flags.size()) return slots;
    for (int k = 0; k < n_slots; ++k) {
      const auto& flags = full.copy_flags[p];
      if (std::find(flags.begin(), flags.end(), slot_ocr[static_cast<std::size_t>(k)]) != flags.end()) {
        slots.push_back(k);
      }
    }
    return slots;
  };

  TextTeacher t;
  t.targets = nn::Matrix::Zero(static_cast<Eigen::Index>(len - 1), vocab_size + n_slots);
  for (std::size_t p = 0; p + 1 < len; ++p) {
    const auto slots = matching_slots(p);
    t.inputs.push_back(p > 0 && !slots.empty() ? DecodeToken::copy(slots.front()) : DecodeToken::word(full.ids[p]));

    const auto row = static_cast<Eigen::Index>(p);
    const int next = full.ids[p + 1];
    const auto next_slots = matching_slots(p + 1);
    bool any = false;
    if (next != kUnk) {
      t.targets(row, next) = 1.0;
      any = true;
    }
    for (int k : next_slots) {
      t.targets(row, vocab_size + k) = 1.0;
      any = true;
    }
    if (!any) t.targets(row, kUnk) = 1.0;
  }
  return t;
}

AnchorCaptioning::AnchorCaptioning(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng)
    : dim_(config.dim), vocab_size_(config.vocab_size), max_caption_(config.max_caption) {
  word_emb_ = &store.add("ancm.word_emb", nn::xavier(config.vocab_size, config.dim, rng));
  pos_emb_ = &store.add("ancm.pos_emb", nn::xavier(config.max_caption + 1, config.dim, rng));
  visual_stack_ = nn::AttentionStack(store, "ancm.visual",
                                     {config.dim, config.heads, config.visual_layers, config.ffn_dim}, rng);
  text_stack_ = nn::AttentionStack(store, "ancm.text", {config.dim, config.heads, config.text_layers, config.ffn_dim}, rng);
  classifier_ = nn::Affine(store, "ancm.f4", config.dim, config.vocab_size, rng);
  pointer_graph_ = nn::Affine(store, "ancm.pointer.graph", config.dim, config.dim, rng);
  pointer_query_ = nn::Affine(store, "ancm.pointer.query", config.dim, config.dim, rng);
}

Var AnchorCaptioning::embed_words(nn::Tape& tape, const std::vector<int>& ids) const {
  if (static_cast<int>(ids.size()) > max_caption_ + 1) {
    throw nn::ShapeError("decode length " + std::to_string(ids.size()) + " exceeds C+1");
  }
  Var words = nn::gather_rows(tape.param(*word_emb_), ids);
  return nn::add(words, nn::slice_rows(tape.param(*pos_emb_), 0, static_cast<Eigen::Index>(ids.size())));
}

Var AnchorCaptioning::embed_text_inputs(nn::Tape& tape, const std::vector<DecodeToken>& inputs,
                                        const Var& graph) const {
  if (static_cast<int>(inputs.size()) > max_caption_ + 1) {
    throw nn::ShapeError("decode length " + std::to_string(inputs.size()) + " exceeds C+1");
  }
  const auto n = static_cast<Eigen::Index>(inputs.size());
  std::vector<int> ids(inputs.size(), kPad);
  std::vector<int> slots(inputs.size(), 0);
  nn::Matrix copy_mask = nn::Matrix::Zero(n, dim_);
  bool any_copy = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].is_copy()) {
      if (inputs[i].copy_slot >= graph.rows()) throw std::out_of_range("copy slot outside the ACG");
      slots[i] = inputs[i].copy_slot;
      copy_mask.row(static_cast<Eigen::Index>(i)).setOnes();
      any_copy = true;
    } else {
      ids[i] = inputs[i].vocab_id;
    }
  }
  Var rows = nn::gather_rows(tape.param(*word_emb_), ids);
  if (any_copy) {
    nn::Matrix keep = nn::Matrix::Ones(n, dim_) - copy_mask;
    rows = nn::add(nn::mul(rows, tape.constant(std::move(keep))),
                   nn::mul(nn::gather_rows(graph, slots), tape.constant(std::move(copy_mask))));
  }
  return nn::add(rows, nn::slice_rows(tape.param(*pos_emb_), 0, n));
}

Var AnchorCaptioning::run_visual(nn::Tape& tape, const FusedFeatures& fused, const std::vector<int>& inputs) const {
  const auto n = static_cast<int>(fused.visual.rows());
  const auto steps = static_cast<int>(inputs.size());
  std::vector<bool> pad(fused.visual_mask);
  pad.resize(static_cast<std::size_t>(n + steps), true);
  Var seq = nn::concat_rows({fused.visual, embed_words(tape, inputs)});
  Var out = visual_stack_.forward(tape, seq, nn::prefix_lm_mask(n, steps), pad);
  return nn::slice_rows(out, n, steps);
}

namespace {

int argmax_row(const nn::Matrix& m, Eigen::Index row, int skip_below) {
  int best = skip_below;
  for (int j = skip_below + 1; j < m.cols(); ++j) {
    if (m(row, j) > m(row, best)) best = j;
  }
  return best;
}

}  // namespace

VisualOutput AnchorCaptioning::visual_caption(nn::Tape& tape, const FusedFeatures& fused,
                                              const EncodedCaption* teacher) const {
  VisualOutput out;
  if (teacher != nullptr) {
    std::vector<int> inputs(teacher->ids.begin(), teacher->ids.end() - 1);
    out.hidden = run_visual(tape, fused, inputs);
    out.logits = classifier_(tape, out.hidden);
    for (Eigen::Index r = 0; r < out.logits.rows(); ++r) out.ids.push_back(argmax_row(out.logits.value(), r, 0));
    return out;
  }
  std::vector<int> inputs{kBos};
  int words = 0;
  while (true) {
    Var hidden = run_visual(tape, fused, inputs);
    Var last = classifier_(tape, nn::slice_rows(hidden, hidden.rows() - 1, 1));
    // PAD and BOS are never emitted.
    const int next = argmax_row(last.value(), 0, kEos);
    out.ids.push_back(next);
    out.hidden = hidden;
    if (next == kEos) break;
    ++words;
    if (words >= max_caption_) break;
    inputs.push_back(next);
  }
  out.logits = classifier_(tape, out.hidden);
  return out;
}

Var AnchorCaptioning::visual_step_logits(nn::Tape& tape, const FusedFeatures& fused,
                                         const std::vector<int>& prefix) const {
  Var hidden = run_visual(tape, fused, prefix);
  return classifier_(tape, nn::slice_rows(hidden, hidden.rows() - 1, 1));
}

std::pair<Var, Var> AnchorCaptioning::run_text(nn::Tape& tape, const Var& graph, const Var& hidden,
                                               const std::vector<DecodeToken>& inputs) const {
  const auto g = static_cast<int>(graph.rows());
  const auto h = static_cast<int>(hidden.rows());
  const auto steps = static_cast<int>(inputs.size());
  Var seq = nn::concat_rows({graph, hidden, embed_text_inputs(tape, inputs, graph)});
  Var out = text_stack_.forward(tape, seq, nn::prefix_lm_mask(g + h, steps),
                                std::vector<bool>(static_cast<std::size_t>(g + h + steps), true));
  return {nn::slice_rows(out, 0, g), nn::slice_rows(out, g + h, steps)};
}

Var AnchorCaptioning::pointer_scores(nn::Tape& tape, const Var& graph_hat, const Var& y_hat) const {
  return nn::matmul_nt(pointer_query_(tape, y_hat), pointer_graph_(tape, graph_hat));
}

Var AnchorCaptioning::text_scores(nn::Tape& tape, const Var& graph_hat, const Var& y_hat) const {
  return nn::concat_cols({classifier_(tape, y_hat), pointer_scores(tape, graph_hat, y_hat)});
}

TextOutput AnchorCaptioning::text_caption(nn::Tape& tape, const Var& graph, const Var& hidden,
                                          const TextTeacher* teacher) const {
  if (graph.rows() < 1) throw nn::ShapeError("text_caption: the ACG needs at least the anchor row");
  auto to_token = [this](int index) {
    return index < vocab_size_ ? DecodeToken::word(index) : DecodeToken::copy(index - vocab_size_);
  };
  TextOutput out;
  if (teacher != nullptr) {
    auto [g_hat, y_hat] = run_text(tape, graph, hidden, teacher->inputs);
    out.scores = text_scores(tape, g_hat, y_hat);
    for (Eigen::Index r = 0; r < out.scores.rows(); ++r) out.tokens.push_back(to_token(argmax_row(out.scores.value(), r, 0)));
    return out;
  }
  std::vector<DecodeToken> inputs{DecodeToken::word(kBos)};
  int words = 0;
  Var g_hat, y_hat;
  while (true) {
    std::tie(g_hat, y_hat) = run_text(tape, graph, hidden, inputs);
    Var last = text_scores(tape, g_hat, nn::slice_rows(y_hat, y_hat.rows() - 1, 1));
    const DecodeToken next = to_token(argmax_row(last.value(), 0, kEos));
    out.tokens.push_back(next);
    if (next == DecodeToken::word(kEos)) break;
    ++words;
    if (words >= max_caption_) break;
    inputs.push_back(next);
  }
  out.scores = text_scores(tape, g_hat, y_hat);
  return out;
}

Var AnchorCaptioning::text_step_scores(nn::Tape& tape, const Var& graph, const Var& hidden,
                                       const std::vector<DecodeToken>& prefix) const {
  auto [g_hat, y_hat] = run_text(tape, graph, hidden, prefix);
  return text_scores(tape, g_hat, nn::slice_rows(y_hat, y_hat.rows() - 1, 1));
}

std::string render_tokens(const std::vector<DecodeToken>& tokens, const Vocabulary& vocab,
                          const std::vector<std::string>& slot_text) {
  std::string out;
  for (const auto& t : tokens) {
    if (!t.is_copy() && t.vocab_id == kEos) break;
    const std::string& w = t.is_copy() ? slot_text.at(static_cast<std::size_t>(t.copy_slot)) : vocab.word(t.vocab_id);
    out += (out.empty() ? "" : " ") + w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

LossBreakdown LossTerms::values() const {
  return {anchor.scalar(), graph.scalar(), vcap.scalar(), tcap.scalar(), total.scalar()};
}

LossTerms compute_losses(nn::Tape& tape, const LossInputs& in, const LossWeights& weights,
                         AnchorLossKind anchor_kind) {
  auto zero = [&tape] { return tape.constant(nn::Matrix::Zero(1, 1)); };
  LossTerms t;

  if (in.gt_anchor && in.anchor_logits.valid()) {
    t.anchor = anchor_kind == AnchorLossKind::bce ? nn::softmax_bce(in.anchor_logits, *in.gt_anchor)
                                                  : nn::softmax_cross_entropy(in.anchor_logits, *in.gt_anchor);
  } else {
    t.anchor = zero();
  }

  if (in.gt_anchor && in.graph_logits.valid()) {
    const auto n = in.graph_logits.cols();
    if (static_cast<Eigen::Index>(in.graph_targets.size()) < n) throw nn::ShapeError("graph targets shorter than scores");
    nn::Matrix y(1, n);
    for (Eigen::Index i = 0; i < n; ++i) y(0, i) = in.graph_targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    t.graph = nn::bce_with_logits(in.graph_logits, y, nn::Matrix::Ones(1, n));
  } else {
    t.graph = zero();
  }

  if (in.vocab_logits.valid() && in.vocab_logits.rows() > 0) {
    const auto steps = in.vocab_logits.rows();
    if (static_cast<Eigen::Index>(in.vcap_targets.size()) != steps) throw nn::ShapeError("vcap targets != steps");
    nn::Matrix y = nn::Matrix::Zero(steps, in.vocab_logits.cols());
    for (Eigen::Index s = 0; s < steps; ++s) y(s, in.vcap_targets[static_cast<std::size_t>(s)]) = 1.0;
    t.vcap = nn::scale(nn::bce_with_logits(in.vocab_logits, y, nn::Matrix::Ones(steps, y.cols())),
                       1.0 / static_cast<double>(steps));
  } else {
    t.vcap = zero();
  }

  if (in.step_scores.valid() && in.step_scores.rows() > 0) {
    const auto steps = in.step_scores.rows();
    if (in.tcap_targets.rows() != steps || in.tcap_targets.cols() != in.step_scores.cols()) {
      throw nn::ShapeError("tcap targets do not match step scores");
    }
    t.tcap = nn::scale(nn::bce_with_logits(in.step_scores, in.tcap_targets,
                                           nn::Matrix::Ones(steps, in.step_scores.cols())),
                       1.0 / static_cast<double>(steps));
  } else {
    t.tcap = zero();
  }

  t.total = nn::add(nn::add(t.anchor, nn::scale(t.graph, weights.alpha)),
                    nn::add(nn::scale(t.vcap, weights.beta), nn::scale(t.tcap, weights.eta)));

  const LossBreakdown v = t.values();
  for (double x : {v.anchor, v.graph, v.vcap, v.tcap}) {
    if (!std::isfinite(x)) throw nn::NumericError("non-finite loss term");
  }
  return t;
}

}  // namespace anchorcap
