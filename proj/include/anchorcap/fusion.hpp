#pragma once

#include <vector>

#include "anchorcap/config.hpp"
#include "anchorcap/layers.hpp"
#include "anchorcap/scene_io.hpp"

namespace anchorcap {

using nn::Var;

struct FusedFeatures {
  Var visual;  // [N x d]
  Var tokens;  // [M x d]
  std::vector<bool> visual_mask;  // true = real object
  std::vector<bool> token_mask;   // true = real OCR token
  int n_objects = 0;
  int n_tokens = 0;
};

// [true x real, false x (cap - real)]
std::vector<bool> pad_mask(int real, int cap);

// f1 / f2 projections (affine + LayerNorm) and the L1-layer joint encoder.
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng);

  // Rows past the object count are zero. Throws nn::ShapeError on width or count mismatch.
  Var embed_visual(nn::Tape& tape, const std::vector<VisualObject>& objects) const;
  Var embed_tokens(nn::Tape& tape, const std::vector<OcrToken>& tokens) const;

  // Joint non-causal self-attention over [V_hat ; T_hat], split back into V and T.
  FusedFeatures fuse(nn::Tape& tape, const Var& v_hat, const Var& t_hat, const std::vector<bool>& visual_mask,
                     const std::vector<bool>& token_mask) const;

  FusedFeatures operator()(nn::Tape& tape, const Scene& scene) const;

 private:
  FeatureDims dims_;
  int dim_ = 0;
  nn::Affine visual_proj_;
  nn::LayerNorm visual_norm_;
  nn::Affine token_proj_;
  nn::LayerNorm token_norm_;
  nn::AttentionStack encoder_;
};

}  // namespace anchorcap
