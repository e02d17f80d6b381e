#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "side/encoder.hpp"
#include "side/nn.hpp"
#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side {

struct DecoderConfig {
  std::size_t decoder_channels = 0;  // 0 = match the encoder's base channels
  double max_depth = 10.0;           // metres; predictions live in (0, max_depth)
  bool attention_temperature_enabled = false;  // optional 1/√C score scaling
  // Ablation switches. Both on = the full architecture.
  bool use_csa = true;  // off: fine path is the linear projection alone
  bool use_msr = true;  // off: per-scale heads + fixed interpolation to full res
  void validate() const;
};

// Five depth maps, coarse to fine: H/16, H/8, H/4, H/2, H (each 1×h×w).
struct MultiStagePrediction {
  std::vector<Tensor> depths;
  const Tensor& final_depth() const { return depths.back(); }
};

// Cross-scale fusion: fine and coarse features are projected to a common
// width; every fine position attends over all coarse positions and adds the
// convex combination to its own projection.
class CsaModule {
 public:
  CsaModule(std::size_t c_fine, std::size_t c_coarse, std::size_t c_dec,
            bool with_attention, Rng& rng);

  struct Result {
    Tensor fused;      // Q + A·K (or just Q without attention), Cdec×H1×W1
    Tensor projected;  // Q alone, the pre-fusion fine projection
  };
  Result forward(const Tensor& f_fine, const Tensor& f_coarse,
                 bool temperature) const;

  void params(const std::string& prefix, NamedParams& out) const;

 private:
  std::size_t c_fine_, c_coarse_, c_dec_;
  bool with_attention_;
  Tensor wf_, bf_;  // proj_fine
  Tensor wc_, bc_;  // proj_coarse (absent when attention is off)
};

// Refinement step: upsample 2×, add the skip when present, run a
// position-wise residual MLP, and read depth off a 1-channel head.
class MsrModule {
 public:
  MsrModule(std::size_t c_dec, Rng& rng);

  // -> (features Cdec×2h×2w, depth 1×2h×2w)
  std::pair<Tensor, Tensor> forward(const Tensor& coarse,
                                    const Tensor* fine_skip,
                                    double max_depth) const;

  void params(const std::string& prefix, NamedParams& out) const;

 private:
  std::size_t c_dec_;
  Tensor w1_, b1_, w2_, b2_;      // two MLP layers, residual
  Tensor head_w_, head_b_;        // Cdec -> 1
};

// Optional record of intermediate maps for receptive-field visualization.
struct DecodeTrace {
  std::vector<Tensor> fused;      // cross-scale outputs, finest first
  std::vector<Tensor> projected;  // matching pre-fusion projections
};

class Decoder {
 public:
  Decoder(const EncoderConfig& ecfg, DecoderConfig cfg, Rng& rng);

  MultiStagePrediction decode(const FeaturePyramid& pyr,
                              DecodeTrace* trace = nullptr) const;

  void params(const std::string& prefix, NamedParams& out) const;
  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  std::vector<CsaModule> csa_;           // csa1 (f1,f2), csa2 (f2,f3), csa3 (f3,f4)
  Tensor f4_w_, f4_b_;                   // stage-4 entry projection (MSR chain)
  std::vector<MsrModule> msr_;           // chain, coarsest first (5 modules)
  std::vector<Tensor> head_w_, head_b_;  // per-scale heads when MSR is off
};

// Cosine-similarity heatmaps against the channel vector at (row, col),
// mapped to [0,1] via (1+cos)/2; returned for (before, after).
std::pair<Tensor, Tensor> receptive_field_map(const Tensor& features_before,
                                              const Tensor& features_after,
                                              std::size_t row, std::size_t col);

}  // namespace side
