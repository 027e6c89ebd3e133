#pragma once

#include <memory>
#include <optional>

#include "anchorcap/ancm.hpp"
#include "anchorcap/anpm.hpp"
#include "anchorcap/config.hpp"
#include "anchorcap/fusion.hpp"
#include "anchorcap/vocab.hpp"

namespace anchorcap {

// Everything produced by one training-mode pass over a scene.
struct TrainingForward {
  FusedFeatures fused;
  AnchorScores anchor;
  GraphScores graph;  // scores for the anchor used to build `acg`
  std::optional<AnchorCentredGraph> acg;
  VisualOutput visual;
  std::optional<TextTeacher> teacher;
  TextOutput text;
  LossTerms loss;
};

// Fusion + AnPM + AnCM over one parameter store. Movable; parameter
// addresses stay put because the store lives on the heap.
class AnchorCaptioner {
 public:
  // config.vocab_size is overwritten with vocab.size().
  AnchorCaptioner(ModelConfig config, Vocabulary vocab);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParameterStore& params() { return *store_; }
  const nn::ParameterStore& params() const { return *store_; }

  const FusionModule& fusion() const { return fusion_; }
  const AnchorProposal& anpm() const { return anpm_; }
  const AnchorCaptioning& ancm() const { return ancm_; }

  // Teacher-forced pass against reference `ref_index` of gt. The ACG is the
  // gt anchor + gt graph unless predicted_acg is set (or no gt anchor exists),
  // in which case it comes from the model's own argmax anchor and threshold.
  // With no OCR tokens, only L_vcap is active.
  TrainingForward training_forward(nn::Tape& tape, const Scene& scene, const GroundTruthLabels& gt, int ref_index,
                                   bool predicted_acg = false) const;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  std::unique_ptr<nn::ParameterStore> store_;
  FusionModule fusion_;
  AnchorProposal anpm_;
  AnchorCaptioning ancm_;
};

}  // namespace anchorcap
