#include "side/decoder.hpp"

#include <cmath>
#include <string>

#include "side/errors.hpp"

namespace side {

void DecoderConfig::validate() const {
  if (!(max_depth > 0.0) || !std::isfinite(max_depth)) {
    throw ConfigError("decoder: max_depth must be a positive finite number");
  }
}

CsaModule::CsaModule(std::size_t c_fine, std::size_t c_coarse, std::size_t c_dec,
                     bool with_attention, Rng& rng)
    : c_fine_(c_fine),
      c_coarse_(c_coarse),
      c_dec_(c_dec),
      with_attention_(with_attention),
      wf_(init_weight(c_fine, c_dec, rng)),
      bf_(init_const_vector(c_dec, 0.0)) {
  if (with_attention_) {
    wc_ = init_weight(c_coarse, c_dec, rng);
    bc_ = init_const_vector(c_dec, 0.0);
  }
}

CsaModule::Result CsaModule::forward(const Tensor& f_fine, const Tensor& f_coarse,
                                     bool temperature) const {
  if (f_fine.rank() != 3 || f_fine.extent(0) != c_fine_) {
    throw ShapeError("csa: fine input must be " + std::to_string(c_fine_) +
                     "xHxW, got " + shape_str(f_fine.shape()));
  }
  const std::size_t h1 = f_fine.extent(1), w1 = f_fine.extent(2);
  Tensor q = linear(chw_to_tokens(f_fine), wf_, bf_);
  Result r;
  r.projected = tokens_to_chw(q, c_dec_, h1, w1);
  if (!with_attention_) {
    r.fused = r.projected;
    return r;
  }
  if (f_coarse.rank() != 3 || f_coarse.extent(0) != c_coarse_) {
    throw ShapeError("csa: coarse input must be " + std::to_string(c_coarse_) +
                     "xHxW, got " + shape_str(f_coarse.shape()));
  }
  Tensor k = linear(chw_to_tokens(f_coarse), wc_, bc_);
  Tensor scores = matmul(q, transpose(k));
  if (temperature) {
    scores = mul_scalar(scores, 1.0 / std::sqrt(static_cast<double>(c_dec_)));
  }
  Tensor att = softmax_rows(scores);  // one row per fine position
  r.fused = tokens_to_chw(add(q, matmul(att, k)), c_dec_, h1, w1);
  return r;
}

void CsaModule::params(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".fine.weight", wf_);
  out.emplace_back(prefix + ".fine.bias", bf_);
  if (with_attention_) {
    out.emplace_back(prefix + ".coarse.weight", wc_);
    out.emplace_back(prefix + ".coarse.bias", bc_);
  }
}

MsrModule::MsrModule(std::size_t c_dec, Rng& rng)
    : c_dec_(c_dec),
      w1_(init_weight(c_dec, c_dec, rng)),
      b1_(init_const_vector(c_dec, 0.0)),
      w2_(init_weight(c_dec, c_dec, rng)),
      b2_(init_const_vector(c_dec, 0.0)),
      head_w_(init_weight(c_dec, 1, rng)),
      head_b_(init_const_vector(1, 0.0)) {}

std::pair<Tensor, Tensor> MsrModule::forward(const Tensor& coarse,
                                             const Tensor* fine_skip,
                                             double max_depth) const {
  if (coarse.rank() != 3 || coarse.extent(0) != c_dec_) {
    throw ShapeError("msr: expected " + std::to_string(c_dec_) + "xHxW input, got " +
                     shape_str(coarse.shape()));
  }
  Tensor s = bilinear_upsample(coarse, 2);
  if (fine_skip) {
    if (fine_skip->shape() != s.shape()) {
      throw ShapeError("msr: skip shape " + shape_str(fine_skip->shape()) +
                       " does not match upsampled " + shape_str(s.shape()));
    }
    s = add(s, *fine_skip);
  }
  const std::size_t h = s.extent(1), w = s.extent(2);
  Tensor tokens = chw_to_tokens(s);
  Tensor refined = add(tokens, linear(gelu(linear(tokens, w1_, b1_)), w2_, b2_));
  Tensor depth = mul_scalar(sigmoid(linear(refined, head_w_, head_b_)), max_depth);
  return {tokens_to_chw(refined, c_dec_, h, w), tokens_to_chw(depth, 1, h, w)};
}

void MsrModule::params(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".mlp.w1", w1_);
  out.emplace_back(prefix + ".mlp.b1", b1_);
  out.emplace_back(prefix + ".mlp.w2", w2_);
  out.emplace_back(prefix + ".mlp.b2", b2_);
  out.emplace_back(prefix + ".head.weight", head_w_);
  out.emplace_back(prefix + ".head.bias", head_b_);
}

Decoder::Decoder(const EncoderConfig& ecfg, DecoderConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)) {
  if (cfg_.decoder_channels == 0) cfg_.decoder_channels = ecfg.base_channels;
  cfg_.validate();
  const std::size_t cd = cfg_.decoder_channels;
  for (std::size_t k = 0; k < 3; ++k) {
    csa_.emplace_back(ecfg.stage_channels(k), ecfg.stage_channels(k + 1), cd,
                      cfg_.use_csa, rng);
  }
  if (cfg_.use_msr) {
    f4_w_ = init_weight(ecfg.stage_channels(3), cd, rng);
    f4_b_ = init_const_vector(cd, 0.0);
    for (std::size_t i = 0; i < 5; ++i) msr_.emplace_back(cd, rng);
  } else {
    for (std::size_t i = 0; i < 3; ++i) {
      head_w_.push_back(init_weight(cd, 1, rng));
      head_b_.push_back(init_const_vector(1, 0.0));
    }
  }
}

MultiStagePrediction Decoder::decode(const FeaturePyramid& pyr,
                                     DecodeTrace* trace) const {
  // Cross-scale fusion of adjacent levels, finest pair first.
  std::vector<CsaModule::Result> fused;
  for (std::size_t k = 0; k < 3; ++k) {
    fused.push_back(csa_[k].forward(pyr.level(k), pyr.level(k + 1),
                                    cfg_.attention_temperature_enabled));
  }
  if (trace) {
    for (const auto& r : fused) {
      trace->fused.push_back(r.fused);
      trace->projected.push_back(r.projected);
    }
  }

  MultiStagePrediction out;
  if (cfg_.use_msr) {
    // Chain entry: stage 4 projected to decoder width, then five refinement
    // steps; the last two run without cross-scale skips.
    const Tensor& f4 = pyr.level(3);
    Tensor x = tokens_to_chw(linear(chw_to_tokens(f4), f4_w_, f4_b_),
                             cfg_.decoder_channels, f4.extent(1), f4.extent(2));
    const Tensor* skips[5] = {&fused[2].fused, &fused[1].fused, &fused[0].fused,
                              nullptr, nullptr};
    for (std::size_t i = 0; i < 5; ++i) {
      auto [features, depth] = msr_[i].forward(x, skips[i], cfg_.max_depth);
      x = features;
      out.depths.push_back(depth);
    }
  } else {
    // Ablation path: per-scale heads on the fused maps; the two finest
    // resolutions come from parameter-free interpolation of the H/4 map.
    for (std::size_t k = 3; k-- > 0;) {  // coarsest scale first
      const Tensor& f = fused[k].fused;
      Tensor tokens = chw_to_tokens(f);
      Tensor d = mul_scalar(sigmoid(linear(tokens, head_w_[k], head_b_[k])),
                            cfg_.max_depth);
      out.depths.push_back(tokens_to_chw(d, 1, f.extent(1), f.extent(2)));
    }
    out.depths.push_back(bilinear_upsample(out.depths.back(), 2));
    out.depths.push_back(bilinear_upsample(out.depths[2], 4));
  }
  return out;
}

void Decoder::params(const std::string& prefix, NamedParams& out) const {
  for (std::size_t k = 0; k < 3; ++k) {
    csa_[k].params(prefix + ".csa" + std::to_string(k + 1), out);
  }
  if (cfg_.use_msr) {
    out.emplace_back(prefix + ".f4_proj.weight", f4_w_);
    out.emplace_back(prefix + ".f4_proj.bias", f4_b_);
    for (std::size_t i = 0; i < 5; ++i) {
      msr_[i].params(prefix + ".msr" + std::to_string(i + 1), out);
    }
  } else {
    for (std::size_t k = 0; k < 3; ++k) {
      out.emplace_back(prefix + ".head" + std::to_string(k + 1) + ".weight",
                       head_w_[k]);
      out.emplace_back(prefix + ".head" + std::to_string(k + 1) + ".bias",
                       head_b_[k]);
    }
  }
}

std::pair<Tensor, Tensor> receptive_field_map(const Tensor& features_before,
                                              const Tensor& features_after,
                                              std::size_t row, std::size_t col) {
  auto heatmap = [&](const Tensor& f) {
    if (f.rank() != 3) {
      throw ShapeError("receptive field: expected CxHxW features, got " +
                       shape_str(f.shape()));
    }
    const std::size_t c = f.extent(0), h = f.extent(1), w = f.extent(2);
    if (row >= h || col >= w) {
      throw ShapeError("receptive field: reference (" + std::to_string(row) + "," +
                       std::to_string(col) + ") outside " + shape_str(f.shape()));
    }
    const std::vector<double>& v = f.data();
    const std::size_t ref = row * w + col;
    double ref_sq = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double x = v[ch * h * w + ref];
      ref_sq += x * x;
    }
    if (ref_sq == 0.0) {
      throw DomainError("receptive field: zero-norm feature at reference (" +
                        std::to_string(row) + "," + std::to_string(col) + ")");
    }
    const double ref_norm = std::sqrt(ref_sq);
    std::vector<double> heat(h * w);
    for (std::size_t p = 0; p < h * w; ++p) {
      if (p == ref) {
        heat[p] = 1.0;  // self-similarity is 1 by definition
        continue;
      }
      double dot = 0.0, sq = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double x = v[ch * h * w + p];
        dot += x * v[ch * h * w + ref];
        sq += x * x;
      }
      if (sq == 0.0) {
        heat[p] = 0.5;  // a zero vector carries no direction; treat as orthogonal
        continue;
      }
      double cosine = dot / (ref_norm * std::sqrt(sq));
      cosine = std::max(-1.0, std::min(1.0, cosine));
      heat[p] = 0.5 * (1.0 + cosine);
    }
    return Tensor::from_data({h, w}, std::move(heat));
  };
  return {heatmap(features_before), heatmap(features_after)};
}

}  // namespace side
