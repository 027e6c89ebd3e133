#include "anchorcap/anpm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace anchorcap {

std::vector<int> AnchorCentredGraph::slots() const {
  std::vector<int> s{anchor};
  s.insert(s.end(), members.begin(), members.end());
  return s;
}

std::vector<int> select_anchors(const AnchorScores& scores, SelectMode mode, int k) {
  if (scores.empty()) return {};
  if (mode == SelectMode::topk && k < 1) throw std::invalid_argument("select_anchors: K must be >= 1");
  std::vector<int> order(static_cast<std::size_t>(scores.n_real));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores.scores[static_cast<std::size_t>(a)] > scores.scores[static_cast<std::size_t>(b)];
  });
  const int keep = mode == SelectMode::train ? 1 : std::min(k, scores.n_real);
  order.resize(static_cast<std::size_t>(keep));
  return order;
}

std::vector<int> confidence_order(const std::vector<double>& confidence) {
  std::vector<int> order(confidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return confidence[static_cast<std::size_t>(a)] > confidence[static_cast<std::size_t>(b)];
  });
  return order;
}

namespace {

std::vector<double> sigmoid_values(const Var& logits) {
  std::vector<double> p(static_cast<std::size_t>(logits.cols()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = 1.0 / (1.0 + std::exp(-logits.value()(0, static_cast<Eigen::Index>(i))));
  }
  return p;
}

GraphScores finish(nn::Tape& tape, const nn::Affine& head, Var features) {
  GraphScores out;
  out.logits = nn::transpose(head(tape, features));
  out.features = std::move(features);
  out.probs = sigmoid_values(out.logits);
  return out;
}

// Recurrent scan over tokens in confidence order, initial state = anchor row.
class SequenceBuilder final : public GraphBuilder {
 public:
  SequenceBuilder(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng)
      : cell_(store, "anpm.graph.gru", config.dim, rng), head_(store, "anpm.graph.f3", config.dim, 1, rng) {}

  GraphStrategy strategy() const override { return GraphStrategy::sequence; }

  GraphScores score(nn::Tape& tape, const Var& tokens, const std::vector<double>& confidence,
                    int anchor) const override {
    const std::vector<int> order = confidence_order(confidence);
    std::vector<int> inverse(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) inverse[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
    Var states = cell_.scan(tape, nn::gather_rows(tokens, order), nn::slice_rows(tokens, anchor, 1));
    return finish(tape, head_, nn::gather_rows(states, inverse));
  }

 private:
  nn::GruCell cell_;
  nn::Affine head_;
};

// One affine map per token on [T_i ; T_anchor].
class IndependentBuilder final : public GraphBuilder {
 public:
  IndependentBuilder(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng)
      : head_(store, "anpm.graph.fc", 2 * config.dim, 1, rng) {}

  GraphStrategy strategy() const override { return GraphStrategy::independent; }

  GraphScores score(nn::Tape& tape, const Var& tokens, const std::vector<double>& /*confidence*/,
                    int anchor) const override {
    const std::vector<int> repeat(static_cast<std::size_t>(tokens.rows()), anchor);
    GraphScores out;
    out.logits = nn::transpose(head_(tape, nn::concat_cols({tokens, nn::gather_rows(tokens, repeat)})));
    out.features = tokens;
    out.probs = sigmoid_values(out.logits);
    return out;
  }

 private:
  nn::Affine head_;
};

// Self-attention over [T_anchor + marker ; T], scored per token row.
class MultipleBuilder final : public GraphBuilder {
 public:
  MultipleBuilder(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng)
      : encoder_(store, "anpm.graph.encoder", {config.dim, config.heads, config.graph_layers, config.ffn_dim}, rng),
        head_(store, "anpm.graph.f3", config.dim, 1, rng) {
    marker_ = &store.add("anpm.graph.anchor_marker", nn::xavier(1, config.dim, rng));
  }

  GraphStrategy strategy() const override { return GraphStrategy::multiple; }

  GraphScores score(nn::Tape& tape, const Var& tokens, const std::vector<double>& /*confidence*/,
                    int anchor) const override {
    const auto n = tokens.rows();
    Var anchor_row = nn::add(nn::slice_rows(tokens, anchor, 1), tape.param(*marker_));
    Var seq = nn::concat_rows({anchor_row, tokens});
    Var out = encoder_.forward(tape, seq, nn::Mask::Constant(n + 1, n + 1, true),
                               std::vector<bool>(static_cast<std::size_t>(n + 1), true));
    return finish(tape, head_, nn::slice_rows(out, 1, n));
  }

 private:
  nn::AttentionStack encoder_;
  nn::Affine head_;
  nn::Parameter* marker_ = nullptr;
};

}  // namespace

std::unique_ptr<GraphBuilder> make_graph_builder(GraphStrategy strategy, nn::ParameterStore& store,
                                                 const ModelConfig& config, nn::Rng& rng) {
  switch (strategy) {
    case GraphStrategy::sequence:
      return std::make_unique<SequenceBuilder>(store, config, rng);
    case GraphStrategy::independent:
      return std::make_unique<IndependentBuilder>(store, config, rng);
    case GraphStrategy::multiple:
      return std::make_unique<MultipleBuilder>(store, config, rng);
  }
  throw std::invalid_argument("unknown graph strategy");
}

AnchorProposal::AnchorProposal(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng)
    : max_tokens_(config.features.max_tokens),
      anchor_head_(store, "anpm.phi", config.dim, 1, rng),
      builder_(make_graph_builder(config.strategy, store, config, rng)) {}

AnchorScores AnchorProposal::predict_anchor_scores(nn::Tape& tape, const FusedFeatures& fused) const {
  AnchorScores out;
  out.scores.assign(static_cast<std::size_t>(fused.tokens.rows()), 0.0);
  out.n_real = fused.n_tokens;
  if (out.n_real == 0) return out;
  out.logits = nn::transpose(anchor_head_(tape, nn::slice_rows(fused.tokens, 0, out.n_real)));
  const auto& z = out.logits.value();
  const double mx = z.maxCoeff();
  double total = 0.0;
  for (int i = 0; i < out.n_real; ++i) total += std::exp(z(0, i) - mx);
  for (int i = 0; i < out.n_real; ++i) out.scores[static_cast<std::size_t>(i)] = std::exp(z(0, i) - mx) / total;
  return out;
}

GraphScores AnchorProposal::graph_scores(nn::Tape& tape, const FusedFeatures& fused,
                                         const std::vector<double>& confidence, int anchor) const {
  if (anchor < 0 || anchor >= fused.n_tokens) {
    throw std::out_of_range("anchor " + std::to_string(anchor) + " is not a real token");
  }
  if (static_cast<int>(confidence.size()) != fused.n_tokens) {
    throw nn::ShapeError("graph_scores: confidence count does not match real tokens");
  }
  return builder_->score(tape, nn::slice_rows(fused.tokens, 0, fused.n_tokens), confidence, anchor);
}

std::vector<int> graph_members(const std::vector<double>& probs, int anchor, double threshold) {
  std::vector<int> members;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (static_cast<int>(i) != anchor && probs[i] > threshold) members.push_back(static_cast<int>(i));
  }
  return members;
}

AnchorCentredGraph assemble_acg(const FusedFeatures& fused, const GraphScores& scores, int anchor,
                                std::vector<int> members, int max_tokens) {
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  members.erase(std::remove(members.begin(), members.end(), anchor), members.end());

  AnchorCentredGraph g;
  g.anchor = anchor;
  g.member_scores.assign(static_cast<std::size_t>(max_tokens), 0.0);
  for (std::size_t i = 0; i < scores.probs.size(); ++i) g.member_scores[i] = scores.probs[i];
  std::vector<Var> rows{nn::slice_rows(fused.tokens, anchor, 1)};
  if (!members.empty()) rows.push_back(nn::gather_rows(scores.features, members));
  g.embedding = rows.size() == 1 ? rows.front() : nn::concat_rows(rows);
  g.members = std::move(members);
  return g;
}

AnchorCentredGraph AnchorProposal::build_acg(nn::Tape& tape, const FusedFeatures& fused,
                                             const std::vector<double>& confidence, int anchor,
                                             double threshold) const {
  GraphScores scores = graph_scores(tape, fused, confidence, anchor);
  return assemble_acg(fused, scores, anchor, graph_members(scores.probs, anchor, threshold), max_tokens_);
}

std::vector<double> token_confidences(const Scene& scene) {
  std::vector<double> c;
  c.reserve(scene.ocr_tokens.size());
  for (const auto& t : scene.ocr_tokens) c.push_back(t.confidence);
  return c;
}

GroundTruthLabels mine_ground_truth(const Scene& scene, const Vocabulary& vocab, int max_words) {
  if (scene.references.empty()) throw std::invalid_argument("mine_ground_truth: scene '" + scene.id + "' has no references");
  const std::size_t m = scene.ocr_tokens.size();
  const auto ocr_words = tokenize_ocr(scene.ocr_tokens);

  GroundTruthLabels gt;
  gt.mention_counts.assign(m, 0);
  gt.graph.assign(m, false);
  std::vector<std::vector<bool>> mentioned;
  for (const auto& ref : scene.references) {
    const OcrMatches matches = match_ocr(tokenize(ref), ocr_words);
    std::vector<bool> in_ref(m, false);
    for (const auto& starts : matches.starts) {
      for (int k : starts) in_ref[static_cast<std::size_t>(k)] = true;
    }
    for (std::size_t k = 0; k < m; ++k) gt.mention_counts[k] += in_ref[k] ? 1 : 0;
    mentioned.push_back(std::move(in_ref));
    gt.targets.push_back(encode_for_targets(ref, scene.ocr_tokens, vocab, max_words));
  }

  int best = -1;
  for (std::size_t k = 0; k < m; ++k) {
    if (gt.mention_counts[k] > 0 && (best < 0 || gt.mention_counts[k] > gt.mention_counts[static_cast<std::size_t>(best)])) {
      best = static_cast<int>(k);
    }
  }
  if (best < 0) return gt;
  gt.anchor = best;
  for (const auto& in_ref : mentioned) {
    if (!in_ref[static_cast<std::size_t>(best)]) continue;
    for (std::size_t k = 0; k < m; ++k) gt.graph[k] = gt.graph[k] || in_ref[k];
  }
  return gt;
}

}  // namespace anchorcap
