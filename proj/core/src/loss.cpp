#include "side/loss.hpp"

#include <cmath>
#include <string>

#include "side/errors.hpp"

namespace side {

namespace {

void require_depth_map(const char* op, const Tensor& t) {
  if (t.rank() != 3 || t.extent(0) != 1) {
    throw ShapeError(std::string(op) + ": expected 1xHxW map, got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

void LossConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("loss: lambda must lie in [0, 1]");
  }
  double positive = 0.0;
  for (double w : stage_weights) {
    if (w < 0.0) throw ConfigError("loss: stage weights must be non-negative");
    positive += w;
  }
  if (positive == 0.0) {
    throw ConfigError("loss: at least one stage weight must be positive");
  }
  if (!(min_valid_depth > 0.0)) {
    throw ConfigError("loss: min_valid_depth must be positive");
  }
}

Tensor silog_sqrt_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                       double lambda) {
  require_depth_map("silog", pred);
  if (gt.shape() != pred.shape() || mask.shape() != pred.shape()) {
    throw ShapeError("silog: pred " + shape_str(pred.shape()) + ", gt " +
                     shape_str(gt.shape()) + " and mask " +
                     shape_str(mask.shape()) + " must agree");
  }
  double n = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double m = mask.data()[i];
    if (m != 0.0 && m != 1.0) {
      throw DomainError("silog: mask must be 0/1, got " + std::to_string(m) +
                        " at index " + std::to_string(i));
    }
    if (m == 1.0 && !(gt.data()[i] > 0.0)) {
      throw DomainError("silog: non-positive ground truth at valid index " +
                        std::to_string(i));
    }
    n += m;
  }
  if (n == 0.0) throw DataError("silog: mask has no valid pixels");

  // log(gt·m + (1−m)) is log(gt) on valid pixels and log(1)=0 elsewhere,
  // keeping the op domain-safe where ground truth is meaningless.
  Tensor ones_minus = add_scalar(mul_scalar(mask, -1.0), 1.0);
  Tensor gt_safe = add(mul(gt, mask), ones_minus);
  Tensor d = sub(log(pred), log(gt_safe));

  Tensor sum_d = masked_sum(d, mask);
  Tensor sum_d2 = masked_sum(mul(d, d), mask);
  Tensor radicand = sub(mul_scalar(sum_d2, 1.0 / n),
                        mul_scalar(mul(sum_d, sum_d), lambda / (n * n)));
  return sqrt(add_scalar(relu(radicand), 1e-12));
}

std::pair<Tensor, Tensor> downsample_gt(const Tensor& gt, const Tensor& mask,
                                        std::size_t target_h, std::size_t target_w) {
  require_depth_map("downsample_gt", gt);
  if (mask.shape() != gt.shape()) {
    throw ShapeError("downsample_gt: gt and mask shapes disagree");
  }
  const std::size_t h = gt.extent(1), w = gt.extent(2);
  if (target_h == 0 || target_w == 0 || h % target_h != 0 || w % target_w != 0) {
    throw ShapeError("downsample_gt: " + std::to_string(h) + "x" +
                     std::to_string(w) + " is not an integer multiple of " +
                     std::to_string(target_h) + "x" + std::to_string(target_w));
  }
  const std::size_t by = h / target_h, bx = w / target_w;
  std::vector<double> out_gt(target_h * target_w, 1.0);  // placeholder value
  std::vector<double> out_mask(target_h * target_w, 0.0);
  for (std::size_t ty = 0; ty < target_h; ++ty) {
    for (std::size_t tx = 0; tx < target_w; ++tx) {
      double acc = 0.0, count = 0.0;
      for (std::size_t dy = 0; dy < by; ++dy) {
        for (std::size_t dx = 0; dx < bx; ++dx) {
          const std::size_t i = (ty * by + dy) * w + (tx * bx + dx);
          if (mask.data()[i] == 1.0) {
            acc += gt.data()[i];
            count += 1.0;
          }
        }
      }
      if (count > 0.0) {
        out_gt[ty * target_w + tx] = acc / count;
        out_mask[ty * target_w + tx] = 1.0;
      }
    }
  }
  return {Tensor::from_data({1, target_h, target_w}, std::move(out_gt)),
          Tensor::from_data({1, target_h, target_w}, std::move(out_mask))};
}

Tensor mss_loss(const MultiStagePrediction& preds, const Tensor& gt,
                const Tensor& mask, const LossConfig& cfg,
                std::vector<std::size_t>* skipped) {
  cfg.validate();
  if (preds.depths.size() != cfg.stage_weights.size()) {
    throw ShapeError("mss: expected " + std::to_string(cfg.stage_weights.size()) +
                     " prediction scales, got " + std::to_string(preds.depths.size()));
  }
  Tensor total;
  for (std::size_t k = 0; k < preds.depths.size(); ++k) {
    if (cfg.stage_weights[k] == 0.0) continue;
    const Tensor& pk = preds.depths[k];
    auto [gt_k, mask_k] = downsample_gt(gt, mask, pk.extent(1), pk.extent(2));
    bool any_valid = false;
    for (double m : mask_k.data()) any_valid = any_valid || m == 1.0;
    if (!any_valid) {
      if (skipped) skipped->push_back(k);
      continue;
    }
    Tensor term =
        mul_scalar(silog_sqrt_loss(pk, gt_k, mask_k, cfg.lambda), cfg.stage_weights[k]);
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) {
    throw DataError("mss: every scale had an empty valid mask");
  }
  return total;
}

}  // namespace side
