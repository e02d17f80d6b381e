#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "side/decoder.hpp"
#include "side/tensor.hpp"

namespace side {

struct LossConfig {
  double lambda = 0.85;                  // variance-term balance coefficient
  std::array<double, 5> stage_weights = {1, 1, 1, 1, 1};  // coarse to fine
  double min_valid_depth = 1e-3;         // ground truth below this is invalid
  void validate() const;
};

// Square-root scale-invariant log loss over valid pixels:
//   d_i = log(pred_i) − log(gt_i),  loss = sqrt((1/n)Σd² − (λ/n²)(Σd)²).
// The radicand is clamped at 0 against roundoff and the root is smoothed as
// sqrt(r + 1e-12) so the gradient stays finite at a perfect fit.
Tensor silog_sqrt_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                       double lambda);

// Block-mean pyramid for ground truth: each target pixel covers an integer
// block; its value is the mean of the block's valid pixels (1.0 placeholder
// when none) and its mask records whether any were valid.
std::pair<Tensor, Tensor> downsample_gt(const Tensor& gt, const Tensor& mask,
                                        std::size_t target_h, std::size_t target_w);

// Weighted sum of per-scale losses. Scales with weight 0 are not evaluated;
// scales whose downsampled mask is empty contribute nothing and are appended
// to *skipped (fatal only if no scale contributes at all).
Tensor mss_loss(const MultiStagePrediction& preds, const Tensor& gt,
                const Tensor& mask, const LossConfig& cfg,
                std::vector<std::size_t>* skipped = nullptr);

}  // namespace side
