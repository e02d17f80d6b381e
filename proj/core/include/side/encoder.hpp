#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "side/nn.hpp"
#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side {

struct EncoderConfig {
  std::size_t base_channels = 8;
  std::array<std::size_t, 4> blocks_per_stage = {1, 1, 1, 1};
  std::array<std::size_t, 4> heads_per_stage = {1, 2, 2, 4};
  static constexpr std::size_t patch_size = 4;

  // Channels double at every stage: C, 2C, 4C, 8C.
  std::size_t stage_channels(std::size_t stage) const {
    return base_channels << stage;  // stage in 0..3
  }
  void validate() const;  // head counts must divide their stage channels
};

// Four feature maps honoring the stage contract:
//   f1: C×H/4×W/4, f2: 2C×H/8×W/8, f3: 4C×H/16×W/16, f4: 8C×H/32×W/32.
struct FeaturePyramid {
  Tensor f1, f2, f3, f4;
  const Tensor& level(std::size_t k) const;  // k in 0..3
};

// Pre-norm transformer block over a token matrix (positions × channels):
// full multi-head self-attention plus a 2-layer GELU MLP, both residual.
class TransformerBlock {
 public:
  TransformerBlock(std::size_t channels, std::size_t heads, Rng& rng);
  Tensor forward(const Tensor& tokens) const;
  void params(const std::string& prefix, NamedParams& out) const;

 private:
  std::size_t channels_, heads_;
  Tensor norm1_gamma_, norm1_beta_;
  Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Tensor norm2_gamma_, norm2_beta_;
  Tensor w1_, b1_, w2_, b2_;
};

// Hierarchical transformer encoder over a fixed input resolution. Patch
// embedding (4×4, learned absolute positions) feeds four attention stages
// separated by 2×2 patch-merging projections.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, std::size_t image_h, std::size_t image_w,
          Rng& rng);

  // 3×H×W -> C×H/4×W/4 (projection of flattened patches + positions).
  Tensor patch_embed(const Tensor& image) const;
  // Runs a stage's transformer blocks; shape preserved. stage in 1..4.
  Tensor encoder_stage(const Tensor& x, std::size_t stage) const;
  // 2×2 channel concat + linear halving of spatial extents. merge in 1..3.
  Tensor patch_merge(const Tensor& x, std::size_t merge) const;

  FeaturePyramid encode(const Tensor& image) const;

  void params(const std::string& prefix, NamedParams& out) const;
  const EncoderConfig& config() const { return cfg_; }
  std::size_t image_h() const { return image_h_; }
  std::size_t image_w() const { return image_w_; }

 private:
  EncoderConfig cfg_;
  std::size_t image_h_, image_w_;
  Tensor embed_w_, embed_b_, pos_embed_;
  std::vector<std::vector<TransformerBlock>> stages_;
  std::vector<Tensor> merge_w_, merge_b_;
};

}  // namespace side
