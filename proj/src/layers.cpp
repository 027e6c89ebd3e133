#include "anchorcap/layers.hpp"

#include <cmath>

namespace anchorcap::nn {

Affine::Affine(ParameterStore& store, const std::string& path, int in, int out, Rng& rng)
    : in_(in), out_(out) {
  weight_ = &store.add(path + ".weight", xavier(in, out, rng));
  bias_ = &store.add(path + ".bias", Matrix::Zero(1, out));
}

Var Affine::operator()(Tape& tape, const Var& x) const {
  if (x.cols() != in_) {
    throw ShapeError("affine: input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(in_));
  }
  return add_row(matmul(x, tape.param(*weight_)), tape.param(*bias_));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& path, int dim) {
  gamma_ = &store.add(path + ".gamma", Matrix::Ones(1, dim));
  beta_ = &store.add(path + ".beta", Matrix::Zero(1, dim));
}

Var LayerNorm::operator()(Tape& tape, const Var& x) const {
  return layer_norm(x, tape.param(*gamma_), tape.param(*beta_), kLayerNormEps);
}

Matrix attention_bias(const Mask& allowed, const std::vector<bool>& pad) {
  const Eigen::Index s = allowed.rows();
  if (allowed.cols() != s || static_cast<Eigen::Index>(pad.size()) != s) {
    throw ShapeError("attention mask shapes do not match sequence length " + std::to_string(s));
  }
  Matrix bias(s, s);
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = 0; j < s; ++j) {
      bias(i, j) = allowed(i, j) && pad[static_cast<std::size_t>(j)] ? 0.0 : kMaskedLogit;
    }
  }
  return bias;
}

AttentionStack::AttentionStack(ParameterStore& store, const std::string& path, AttentionConfig config, Rng& rng)
    : config_(config) {
  if (config.heads <= 0 || config.dim % config.heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(config.dim) + " not divisible by heads " +
                     std::to_string(config.heads));
  }
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = path + ".layer" + std::to_string(l);
    Layer layer;
    layer.query = Affine(store, p + ".query", config.dim, config.dim, rng);
    layer.key = Affine(store, p + ".key", config.dim, config.dim, rng);
    layer.value = Affine(store, p + ".value", config.dim, config.dim, rng);
    layer.output = Affine(store, p + ".output", config.dim, config.dim, rng);
    layer.attn_norm = LayerNorm(store, p + ".attn_norm", config.dim);
    layer.ffn_in = Affine(store, p + ".ffn_in", config.dim, config.ffn_dim, rng);
    layer.ffn_out = Affine(store, p + ".ffn_out", config.ffn_dim, config.dim, rng);
    layer.ffn_norm = LayerNorm(store, p + ".ffn_norm", config.dim);
    layers_.push_back(std::move(layer));
  }
}

Var AttentionStack::forward(Tape& tape, const Var& inputs, const Mask& attn_mask,
                            const std::vector<bool>& pad_mask) const {
  const Eigen::Index s = inputs.rows();
  if (inputs.cols() != config_.dim) {
    throw ShapeError("attention: input width " + std::to_string(inputs.cols()) + " != model dim " +
                     std::to_string(config_.dim));
  }
  if (attn_mask.rows() != s || attn_mask.cols() != s || static_cast<Eigen::Index>(pad_mask.size()) != s) {
    throw ShapeError("attention: mask shapes do not match sequence length " + std::to_string(s));
  }
  if (layers_.empty()) return inputs;

  const Matrix bias = attention_bias(attn_mask, pad_mask);
  const int head_dim = config_.dim / config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var x = inputs;
  for (const Layer& layer : layers_) {
    Var q = layer.query(tape, x);
    Var k = layer.key(tape, x);
    Var v = layer.value(tape, x);
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(config_.heads));
    for (int h = 0; h < config_.heads; ++h) {
      Var qh = config_.heads == 1 ? q : slice_cols(q, h * head_dim, head_dim);
      Var kh = config_.heads == 1 ? k : slice_cols(k, h * head_dim, head_dim);
      Var vh = config_.heads == 1 ? v : slice_cols(v, h * head_dim, head_dim);
      Var weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), &bias);
      heads.push_back(matmul(weights, vh));
    }
    Var attended = config_.heads == 1 ? heads.front() : concat_cols(heads);
    x = layer.attn_norm(tape, add(x, layer.output(tape, attended)));
    Var ffn = layer.ffn_out(tape, gelu(layer.ffn_in(tape, x)));
    x = layer.ffn_norm(tape, add(x, ffn));
  }
  return x;
}

GruCell::GruCell(ParameterStore& store, const std::string& path, int dim, Rng& rng) : dim_(dim) {
  input_z_ = Affine(store, path + ".input_z", dim, dim, rng);
  input_r_ = Affine(store, path + ".input_r", dim, dim, rng);
  input_n_ = Affine(store, path + ".input_n", dim, dim, rng);
  hidden_z_ = &store.add(path + ".hidden_z", xavier(dim, dim, rng));
  hidden_r_ = &store.add(path + ".hidden_r", xavier(dim, dim, rng));
  hidden_n_ = &store.add(path + ".hidden_n", xavier(dim, dim, rng));
}

Var GruCell::scan(Tape& tape, const Var& inputs, const Var& h0) const {
  if (inputs.cols() != dim_ || h0.rows() != 1 || h0.cols() != dim_) {
    throw ShapeError("gru: expected inputs [S x " + std::to_string(dim_) + "] and h0 [1 x " +
                     std::to_string(dim_) + "]");
  }
  const Eigen::Index steps = inputs.rows();
  if (steps == 0) return inputs;
  // Input projections for all steps at once; the recurrence only touches the hidden side.
  Var xz = input_z_(tape, inputs);
  Var xr = input_r_(tape, inputs);
  Var xn = input_n_(tape, inputs);
  Var uz = tape.param(*hidden_z_);
  Var ur = tape.param(*hidden_r_);
  Var un = tape.param(*hidden_n_);

  std::vector<Var> outputs;
  outputs.reserve(static_cast<std::size_t>(steps));
  Var h = h0;
  for (Eigen::Index s = 0; s < steps; ++s) {
    Var z = sigmoid(add(slice_rows(xz, s, 1), matmul(h, uz)));
    Var r = sigmoid(add(slice_rows(xr, s, 1), matmul(h, ur)));
    Var n = tanh(add(slice_rows(xn, s, 1), matmul(mul(r, h), un)));
    // (1 - z) * n + z * h  ==  n + z * (h - n)
    h = add(n, mul(z, sub(h, n)));
    outputs.push_back(h);
  }
  return concat_rows(outputs);
}

Mask prefix_lm_mask(int prefix, int decode) {
  const int s = prefix + decode;
  Mask m = Mask::Constant(s, s, false);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      if (j < prefix) {
        m(i, j) = true;
      } else if (i >= prefix) {
        m(i, j) = j <= i;
      }
    }
  }
  return m;
}

}  // namespace anchorcap::nn
