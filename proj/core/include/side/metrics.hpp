#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "side/tensor.hpp"

namespace side {

struct MetricReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;                 // natural log
  std::array<double, 3> delta = {0, 0, 0};  // percent under 1.25, 1.25², 1.25³
  std::size_t n_valid = 0;
};

// Depth cap and optional center crop applied before metric computation.
struct EvalPolicy {
  double depth_cap = 80.0;           // ground truth above this is invalidated
  std::size_t crop_h = 0, crop_w = 0;  // 0/0 = full frame
};

// The five evaluation metrics over the valid pixel set; ratios use the strict
// inequality max(gt/pred, pred/gt) < 1.25^t.
MetricReport compute_metrics(const Tensor& pred, const Tensor& gt,
                             const Tensor& mask);

// Per-image pooling: unweighted mean of each metric; valid counts summed.
MetricReport aggregate(const std::vector<MetricReport>& reports);

// Applies the policy (cap, center crop), then computes metrics.
MetricReport eval_protocol(const Tensor& pred, const Tensor& gt,
                           const Tensor& mask, const EvalPolicy& policy);

std::string report_table(const MetricReport& r);  // aligned human-readable
std::string report_lines(const MetricReport& r);  // metric=value per line

}  // namespace side
