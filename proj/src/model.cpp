#include "anchorcap/model.hpp"

namespace anchorcap {

namespace {

ModelConfig with_vocab(ModelConfig c, const Vocabulary& v) {
  c.vocab_size = v.size();
  return c;
}

}  // namespace

AnchorCaptioner::AnchorCaptioner(ModelConfig config, Vocabulary vocab)
    : config_(with_vocab(std::move(config), vocab)),
      vocab_(std::move(vocab)),
      store_(std::make_unique<nn::ParameterStore>()) {
  // Initialisation order is fixed so a given init_seed always yields the same weights.
  nn::Rng rng(config_.init_seed);
  fusion_ = FusionModule(*store_, config_, rng);
  anpm_ = AnchorProposal(*store_, config_, rng);
  ancm_ = AnchorCaptioning(*store_, config_, rng);
}

TrainingForward AnchorCaptioner::training_forward(nn::Tape& tape, const Scene& scene, const GroundTruthLabels& gt,
                                                  int ref_index, bool predicted_acg) const {
  if (ref_index < 0 || ref_index >= static_cast<int>(gt.targets.size())) {
    throw std::out_of_range("reference index " + std::to_string(ref_index) + " out of range for scene '" + scene.id + "'");
  }
  TrainingForward f;
  f.fused = fusion_(tape, scene);
  f.anchor = anpm_.predict_anchor_scores(tape, f.fused);
  const auto confidence = token_confidences(scene);

  LossInputs in;
  if (!f.anchor.empty()) {
    in.anchor_logits = f.anchor.logits;
    in.gt_anchor = gt.anchor;
    if (gt.anchor) {
      f.graph = anpm_.graph_scores(tape, f.fused, confidence, *gt.anchor);
      in.graph_logits = f.graph.logits;
      in.graph_targets = gt.graph;
    }
    if (gt.anchor && !predicted_acg) {
      std::vector<int> members;
      for (std::size_t i = 0; i < gt.graph.size(); ++i) {
        if (gt.graph[i]) members.push_back(static_cast<int>(i));
      }
      f.acg = assemble_acg(f.fused, f.graph, *gt.anchor, std::move(members), config_.features.max_tokens);
    } else {
      const int anchor = select_anchors(f.anchor, SelectMode::train).front();
      f.acg = anpm_.build_acg(tape, f.fused, confidence, anchor, config_.graph_threshold);
    }
  }

  const CaptionTargets& targets = gt.targets[static_cast<std::size_t>(ref_index)];
  f.visual = ancm_.visual_caption(tape, f.fused, &targets.masked);
  in.vocab_logits = f.visual.logits;
  in.vcap_targets.assign(targets.masked.ids.begin() + 1, targets.masked.ids.end());

  if (f.acg) {
    f.teacher = make_text_teacher(targets.full, f.acg->slots(), config_.vocab_size);
    f.text = ancm_.text_caption(tape, f.acg->embedding, f.visual.hidden, &*f.teacher);
    in.step_scores = f.text.scores;
    in.tcap_targets = f.teacher->targets;
  }

  f.loss = compute_losses(tape, in, config_.weights, config_.anchor_loss);
  return f;
}

}  // namespace anchorcap
