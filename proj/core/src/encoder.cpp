#include "side/encoder.hpp"

#include <cmath>
#include <string>

#include "side/errors.hpp"

namespace side {

void EncoderConfig::validate() const {
  if (base_channels == 0) throw ConfigError("encoder: base_channels must be positive");
  for (std::size_t k = 0; k < 4; ++k) {
    if (blocks_per_stage[k] == 0) {
      throw ConfigError("encoder: blocks_per_stage must be positive");
    }
    if (heads_per_stage[k] == 0 || stage_channels(k) % heads_per_stage[k] != 0) {
      throw ConfigError("encoder: stage " + std::to_string(k + 1) + " channels " +
                        std::to_string(stage_channels(k)) +
                        " not divisible by head count " +
                        std::to_string(heads_per_stage[k]));
    }
  }
}

const Tensor& FeaturePyramid::level(std::size_t k) const {
  switch (k) {
    case 0: return f1;
    case 1: return f2;
    case 2: return f3;
    case 3: return f4;
    default: throw ShapeError("pyramid: level index must be in 0..3");
  }
}

TransformerBlock::TransformerBlock(std::size_t channels, std::size_t heads, Rng& rng)
    : channels_(channels),
      heads_(heads),
      norm1_gamma_(init_const_vector(channels, 1.0)),
      norm1_beta_(init_const_vector(channels, 0.0)),
      wq_(init_weight(channels, channels, rng)),
      bq_(init_const_vector(channels, 0.0)),
      wk_(init_weight(channels, channels, rng)),
      bk_(init_const_vector(channels, 0.0)),
      wv_(init_weight(channels, channels, rng)),
      bv_(init_const_vector(channels, 0.0)),
      wo_(init_weight(channels, channels, rng)),
      bo_(init_const_vector(channels, 0.0)),
      norm2_gamma_(init_const_vector(channels, 1.0)),
      norm2_beta_(init_const_vector(channels, 0.0)),
      w1_(init_weight(channels, 2 * channels, rng)),
      b1_(init_const_vector(2 * channels, 0.0)),
      w2_(init_weight(2 * channels, channels, rng)),
      b2_(init_const_vector(channels, 0.0)) {}

Tensor TransformerBlock::forward(const Tensor& tokens) const {
  const std::size_t dh = channels_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor h = layer_norm(tokens, norm1_gamma_, norm1_beta_);
  Tensor q = linear(h, wq_, bq_);
  Tensor k = linear(h, wk_, bk_);
  Tensor v = linear(h, wv_, bv_);
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads_);
  for (std::size_t hd = 0; hd < heads_; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor kh = slice_cols(k, hd * dh, dh);
    Tensor vh = slice_cols(v, hd * dh, dh);
    Tensor att = softmax_rows(mul_scalar(matmul(qh, transpose(kh)), scale));
    head_outs.push_back(matmul(att, vh));
  }
  Tensor attn = linear(concat_cols(head_outs), wo_, bo_);
  Tensor x1 = add(tokens, attn);

  Tensor h2 = layer_norm(x1, norm2_gamma_, norm2_beta_);
  Tensor mlp = linear(gelu(linear(h2, w1_, b1_)), w2_, b2_);
  return add(x1, mlp);
}

void TransformerBlock::params(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".norm1.gamma", norm1_gamma_);
  out.emplace_back(prefix + ".norm1.beta", norm1_beta_);
  out.emplace_back(prefix + ".attn.wq", wq_);
  out.emplace_back(prefix + ".attn.bq", bq_);
  out.emplace_back(prefix + ".attn.wk", wk_);
  out.emplace_back(prefix + ".attn.bk", bk_);
  out.emplace_back(prefix + ".attn.wv", wv_);
  out.emplace_back(prefix + ".attn.bv", bv_);
  out.emplace_back(prefix + ".attn.wo", wo_);
  out.emplace_back(prefix + ".attn.bo", bo_);
  out.emplace_back(prefix + ".norm2.gamma", norm2_gamma_);
  out.emplace_back(prefix + ".norm2.beta", norm2_beta_);
  out.emplace_back(prefix + ".mlp.w1", w1_);
  out.emplace_back(prefix + ".mlp.b1", b1_);
  out.emplace_back(prefix + ".mlp.w2", w2_);
  out.emplace_back(prefix + ".mlp.b2", b2_);
}

namespace {

constexpr std::size_t kPatch = EncoderConfig::patch_size;

void require_divisible(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0) {
    throw ConfigError("encoder: image extents must be divisible by 32 (four "
                      "halvings after the 4x4 patch embed), got " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg, std::size_t image_h, std::size_t image_w,
                 Rng& rng)
    : cfg_(cfg), image_h_(image_h), image_w_(image_w) {
  cfg_.validate();
  require_divisible(image_h, image_w);
  const std::size_t c = cfg_.base_channels;
  const std::size_t tokens = (image_h / kPatch) * (image_w / kPatch);
  embed_w_ = init_weight(3 * kPatch * kPatch, c, rng);
  embed_b_ = init_const_vector(c, 0.0);
  pos_embed_ = Tensor::zeros({tokens, c}, true);
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<TransformerBlock> blocks;
    for (std::size_t b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
      blocks.emplace_back(cfg_.stage_channels(s), cfg_.heads_per_stage[s], rng);
    }
    stages_.push_back(std::move(blocks));
    if (s < 3) {
      const std::size_t ck = cfg_.stage_channels(s);
      merge_w_.push_back(init_weight(4 * ck, 2 * ck, rng));
      merge_b_.push_back(init_const_vector(2 * ck, 0.0));
    }
  }
}

Tensor Encoder::patch_embed(const Tensor& image) const {
  if (image.shape() != Shape{3, image_h_, image_w_}) {
    throw ShapeError("encoder: expected image 3x" + std::to_string(image_h_) + "x" +
                     std::to_string(image_w_) + ", got " + shape_str(image.shape()));
  }
  const std::size_t gh = image_h_ / kPatch, gw = image_w_ / kPatch;
  // One row per patch: the 4x4x3 block flattened channel-major into 48 values.
  std::vector<std::size_t> map(gh * gw * 3 * kPatch * kPatch);
  std::size_t at = 0;
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < kPatch; ++dy)
          for (std::size_t dx = 0; dx < kPatch; ++dx)
            map[at++] = c * image_h_ * image_w_ + (py * kPatch + dy) * image_w_ +
                        (px * kPatch + dx);
  Tensor patches = gather(image, std::move(map), {gh * gw, 3 * kPatch * kPatch});
  Tensor emb = add(linear(patches, embed_w_, embed_b_), pos_embed_);
  return tokens_to_chw(emb, cfg_.base_channels, gh, gw);
}

Tensor Encoder::encoder_stage(const Tensor& x, std::size_t stage) const {
  if (stage < 1 || stage > 4) {
    throw ConfigError("encoder: stage index must be in 1..4");
  }
  const std::size_t ck = cfg_.stage_channels(stage - 1);
  if (x.rank() != 3 || x.extent(0) != ck) {
    throw ShapeError("encoder: stage " + std::to_string(stage) + " expects " +
                     std::to_string(ck) + " channels, got " + shape_str(x.shape()));
  }
  const std::size_t h = x.extent(1), w = x.extent(2);
  Tensor t = chw_to_tokens(x);
  for (const TransformerBlock& block : stages_[stage - 1]) t = block.forward(t);
  return tokens_to_chw(t, ck, h, w);
}

Tensor Encoder::patch_merge(const Tensor& x, std::size_t merge) const {
  if (merge < 1 || merge > 3) {
    throw ConfigError("encoder: merge index must be in 1..3");
  }
  const std::size_t ck = cfg_.stage_channels(merge - 1);
  if (x.rank() != 3 || x.extent(0) != ck) {
    throw ShapeError("encoder: merge " + std::to_string(merge) + " expects " +
                     std::to_string(ck) + " channels, got " + shape_str(x.shape()));
  }
  const std::size_t h = x.extent(1), w = x.extent(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("encoder: merge needs even spatial extents, got " +
                     shape_str(x.shape()));
  }
  // Row per 2x2 neighborhood: channel vectors of TL, TR, BL, BR concatenated.
  std::vector<std::size_t> map((h / 2) * (w / 2) * 4 * ck);
  std::size_t at = 0;
  for (std::size_t py = 0; py < h / 2; ++py)
    for (std::size_t px = 0; px < w / 2; ++px)
      for (std::size_t qy = 0; qy < 2; ++qy)
        for (std::size_t qx = 0; qx < 2; ++qx)
          for (std::size_t c = 0; c < ck; ++c)
            map[at++] = c * h * w + (2 * py + qy) * w + (2 * px + qx);
  Tensor merged = gather(x, std::move(map), {(h / 2) * (w / 2), 4 * ck});
  Tensor proj = linear(merged, merge_w_[merge - 1], merge_b_[merge - 1]);
  return tokens_to_chw(proj, 2 * ck, h / 2, w / 2);
}

FeaturePyramid Encoder::encode(const Tensor& image) const {
  FeaturePyramid p;
  Tensor x = patch_embed(image);
  p.f1 = encoder_stage(x, 1);
  p.f2 = encoder_stage(patch_merge(p.f1, 1), 2);
  p.f3 = encoder_stage(patch_merge(p.f2, 2), 3);
  p.f4 = encoder_stage(patch_merge(p.f3, 3), 4);
  return p;
}

void Encoder::params(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".embed.weight", embed_w_);
  out.emplace_back(prefix + ".embed.bias", embed_b_);
  out.emplace_back(prefix + ".embed.pos", pos_embed_);
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].params(prefix + ".stage" + std::to_string(s + 1) + ".block" +
                               std::to_string(b),
                           out);
    }
    if (s < 3) {
      out.emplace_back(prefix + ".merge" + std::to_string(s + 1) + ".weight",
                       merge_w_[s]);
      out.emplace_back(prefix + ".merge" + std::to_string(s + 1) + ".bias",
                       merge_b_[s]);
    }
  }
}

}  // namespace side
