#pragma once

#include <string>
#include <vector>

#include "anchorcap/autograd.hpp"

namespace anchorcap::nn {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskedLogit = -1e9;

// x W + b, with W stored [in x out].
class Affine {
 public:
  Affine() = default;
  Affine(ParameterStore& store, const std::string& path, int in, int out, Rng& rng);

  Var operator()(Tape& tape, const Var& x) const;

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  int in_ = 0;
  int out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& path, int dim);

  Var operator()(Tape& tape, const Var& x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

struct AttentionConfig {
  int dim = 64;
  int heads = 4;
  int layers = 1;
  int ffn_dim = 128;
};

// Additive attention bias: 0 where query i may attend key j, kMaskedLogit
// otherwise. Key j is blocked when pad[j] is false.
Matrix attention_bias(const Mask& allowed, const std::vector<bool>& pad);

// Post-norm transformer encoder stack (BERT layout) with explicit masks.
class AttentionStack {
 public:
  AttentionStack() = default;
  AttentionStack(ParameterStore& store, const std::string& path, AttentionConfig config, Rng& rng);

  // inputs [S x d]; attn_mask [S x S] (true = may attend); pad_mask [S] (true = real).
  // Throws ShapeError on any mismatch.
  Var forward(Tape& tape, const Var& inputs, const Mask& attn_mask, const std::vector<bool>& pad_mask) const;

  const AttentionConfig& config() const { return config_; }

 private:
  struct Layer {
    Affine query, key, value, output;
    LayerNorm attn_norm;
    Affine ffn_in, ffn_out;
    LayerNorm ffn_norm;
  };

  AttentionConfig config_;
  std::vector<Layer> layers_;
};

// Gated recurrent cell (update/reset gates):
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   n = tanh(x Wn + (r * h) Un + bn)
//   h' = (1 - z) * n + z * h
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterStore& store, const std::string& path, int dim, Rng& rng);

  // inputs [S x d], h0 [1 x d] -> hidden states [S x d].
  Var scan(Tape& tape, const Var& inputs, const Var& h0) const;

  int dim() const { return dim_; }

 private:
  Affine input_z_, input_r_, input_n_;  // carry the biases
  Parameter* hidden_z_ = nullptr;
  Parameter* hidden_r_ = nullptr;
  Parameter* hidden_n_ = nullptr;
  int dim_ = 0;
};

// Prefix-LM mask over [prefix ; decode]: prefix rows see the whole prefix,
// decode row i sees the prefix plus decode rows <= i.
Mask prefix_lm_mask(int prefix, int decode);

}  // namespace anchorcap::nn
