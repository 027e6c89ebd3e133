#include "anchorcap/fusion.hpp"

#include <algorithm>

namespace anchorcap {

std::vector<bool> pad_mask(int real, int cap) {
  std::vector<bool> m(static_cast<std::size_t>(cap), false);
  for (int i = 0; i < real && i < cap; ++i) m[static_cast<std::size_t>(i)] = true;
  return m;
}

FusionModule::FusionModule(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& rng)
    : dims_(config.features), dim_(config.dim) {
  const int visual_in = dims_.d_app + 4;
  const int token_in = dims_.d_app + 4 + dims_.d_ft + dims_.d_phoc;
  visual_proj_ = nn::Affine(store, "fusion.f1", visual_in, config.dim, rng);
  visual_norm_ = nn::LayerNorm(store, "fusion.f1_norm", config.dim);
  token_proj_ = nn::Affine(store, "fusion.f2", token_in, config.dim, rng);
  token_norm_ = nn::LayerNorm(store, "fusion.f2_norm", config.dim);
  encoder_ = nn::AttentionStack(store, "fusion.encoder",
                                {config.dim, config.heads, config.fusion_layers, config.ffn_dim}, rng);
}

namespace {

void append(nn::Matrix& m, Eigen::Index row, Eigen::Index& col, const std::vector<double>& v) {
  for (double x : v) m(row, col++) = x;
}

Var pad_rows(nn::Tape& tape, Var rows, int cap, int dim) {
  const auto real = rows.valid() ? rows.rows() : 0;
  if (real == cap) return rows;
  Var zeros = tape.constant(nn::Matrix::Zero(cap - real, dim));
  return real == 0 ? zeros : nn::concat_rows({rows, zeros});
}

}  // namespace

Var FusionModule::embed_visual(nn::Tape& tape, const std::vector<VisualObject>& objects) const {
  const auto n = static_cast<Eigen::Index>(objects.size());
  if (n > dims_.max_objects) {
    throw nn::ShapeError("embed_visual: " + std::to_string(n) + " objects exceed N=" + std::to_string(dims_.max_objects));
  }
  Var rows;
  if (n > 0) {
    nn::Matrix feats(n, visual_proj_.in_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& o = objects[static_cast<std::size_t>(i)];
      if (static_cast<int>(o.appearance.size()) != dims_.d_app) {
        throw nn::ShapeError("embed_visual: appearance width " + std::to_string(o.appearance.size()) +
                             " != d_app " + std::to_string(dims_.d_app));
      }
      Eigen::Index col = 0;
      append(feats, i, col, o.appearance);
      for (double b : o.bbox) feats(i, col++) = b;
    }
    rows = visual_norm_(tape, visual_proj_(tape, tape.constant(std::move(feats))));
  }
  return pad_rows(tape, rows, dims_.max_objects, dim_);
}

Var FusionModule::embed_tokens(nn::Tape& tape, const std::vector<OcrToken>& tokens) const {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n > dims_.max_tokens) {
    throw nn::ShapeError("embed_tokens: " + std::to_string(n) + " tokens exceed M=" + std::to_string(dims_.max_tokens));
  }
  Var rows;
  if (n > 0) {
    nn::Matrix feats(n, token_proj_.in_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = tokens[static_cast<std::size_t>(i)];
      if (static_cast<int>(t.appearance.size()) != dims_.d_app || static_cast<int>(t.word_emb.size()) != dims_.d_ft ||
          static_cast<int>(t.char_emb.size()) != dims_.d_phoc) {
        throw nn::ShapeError("embed_tokens: feature widths of token '" + t.text + "' do not match the manifest");
      }
      Eigen::Index col = 0;
      append(feats, i, col, t.appearance);
      for (double b : t.bbox) feats(i, col++) = b;
      append(feats, i, col, t.word_emb);
      append(feats, i, col, t.char_emb);
    }
    rows = token_norm_(tape, token_proj_(tape, tape.constant(std::move(feats))));
  }
  return pad_rows(tape, rows, dims_.max_tokens, dim_);
}

FusedFeatures FusionModule::fuse(nn::Tape& tape, const Var& v_hat, const Var& t_hat,
                                 const std::vector<bool>& visual_mask, const std::vector<bool>& token_mask) const {
  const auto n = v_hat.rows();
  const auto m = t_hat.rows();
  if (static_cast<Eigen::Index>(visual_mask.size()) != n || static_cast<Eigen::Index>(token_mask.size()) != m) {
    throw nn::ShapeError("fuse: masks do not match feature rows");
  }
  std::vector<bool> pad(visual_mask);
  pad.insert(pad.end(), token_mask.begin(), token_mask.end());
  const nn::Mask full = nn::Mask::Constant(n + m, n + m, true);
  Var joint = encoder_.forward(tape, nn::concat_rows({v_hat, t_hat}), full, pad);

  FusedFeatures out;
  out.visual = nn::slice_rows(joint, 0, n);
  out.tokens = nn::slice_rows(joint, n, m);
  out.visual_mask = visual_mask;
  out.token_mask = token_mask;
  out.n_objects = static_cast<int>(std::count(visual_mask.begin(), visual_mask.end(), true));
  out.n_tokens = static_cast<int>(std::count(token_mask.begin(), token_mask.end(), true));
  return out;
}

FusedFeatures FusionModule::operator()(nn::Tape& tape, const Scene& scene) const {
  Var v_hat = embed_visual(tape, scene.visual_objects);
  Var t_hat = embed_tokens(tape, scene.ocr_tokens);
  return fuse(tape, v_hat, t_hat, pad_mask(static_cast<int>(scene.visual_objects.size()), dims_.max_objects),
              pad_mask(static_cast<int>(scene.ocr_tokens.size()), dims_.max_tokens));
}

}  // namespace anchorcap
