#include "side/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

#include "side/errors.hpp"

namespace side {

MetricReport compute_metrics(const Tensor& pred, const Tensor& gt,
                             const Tensor& mask) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape()) {
    throw ShapeError("metrics: pred " + shape_str(pred.shape()) + ", gt " +
                     shape_str(gt.shape()) + " and mask " +
                     shape_str(mask.shape()) + " must agree");
  }
  const std::vector<double>& p = pred.data();
  const std::vector<double>& g = gt.data();
  const std::vector<double>& m = mask.data();

  MetricReport r;
  double abs_rel = 0.0, sq_rel = 0.0, sq = 0.0, sq_log = 0.0;
  std::size_t under[3] = {0, 0, 0};
  const double bounds[3] = {1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25};
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0) continue;
    if (m[i] != 1.0) {
      throw DomainError("metrics: mask must be 0/1, got " + std::to_string(m[i]) +
                        " at index " + std::to_string(i));
    }
    if (!(p[i] > 0.0) || !(g[i] > 0.0)) {
      throw DomainError("metrics: non-positive depth at valid index " +
                        std::to_string(i));
    }
    const double diff = g[i] - p[i];
    abs_rel += std::fabs(diff) / g[i];
    sq_rel += diff * diff / g[i];
    sq += diff * diff;
    const double dl = std::log(g[i]) - std::log(p[i]);
    sq_log += dl * dl;
    const double ratio = std::max(g[i] / p[i], p[i] / g[i]);
    for (int t = 0; t < 3; ++t) {
      if (ratio < bounds[t]) ++under[t];
    }
    ++r.n_valid;
  }
  if (r.n_valid == 0) throw DataError("metrics: mask has no valid pixels");

  const double n = static_cast<double>(r.n_valid);
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(sq / n);
  r.rmse_log = std::sqrt(sq_log / n);
  for (int t = 0; t < 3; ++t) r.delta[t] = 100.0 * static_cast<double>(under[t]) / n;
  return r;
}

MetricReport aggregate(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw DataError("metrics: nothing to aggregate");
  MetricReport out;
  for (const MetricReport& r : reports) {
    out.abs_rel += r.abs_rel;
    out.sq_rel += r.sq_rel;
    out.rmse += r.rmse;
    out.rmse_log += r.rmse_log;
    for (int t = 0; t < 3; ++t) out.delta[t] += r.delta[t];
    out.n_valid += r.n_valid;
  }
  const double n = static_cast<double>(reports.size());
  out.abs_rel /= n;
  out.sq_rel /= n;
  out.rmse /= n;
  out.rmse_log /= n;
  for (int t = 0; t < 3; ++t) out.delta[t] /= n;
  return out;
}

MetricReport eval_protocol(const Tensor& pred, const Tensor& gt,
                           const Tensor& mask, const EvalPolicy& policy) {
  if (pred.rank() != 3 || pred.extent(0) != 1) {
    throw ShapeError("metrics: expected 1xHxW maps, got " + shape_str(pred.shape()));
  }
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape()) {
    throw ShapeError("metrics: pred, gt and mask shapes must agree");
  }
  const std::size_t h = pred.extent(1), w = pred.extent(2);
  std::size_t ch = policy.crop_h == 0 ? h : policy.crop_h;
  std::size_t cw = policy.crop_w == 0 ? w : policy.crop_w;
  if (ch > h || cw > w) {
    throw ShapeError("metrics: crop " + std::to_string(ch) + "x" +
                     std::to_string(cw) + " exceeds image " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
  const std::size_t oy = (h - ch) / 2, ox = (w - cw) / 2;
  std::vector<double> cp(ch * cw), cg(ch * cw), cm(ch * cw);
  for (std::size_t y = 0; y < ch; ++y) {
    for (std::size_t x = 0; x < cw; ++x) {
      const std::size_t src = (oy + y) * w + (ox + x);
      const std::size_t dst = y * cw + x;
      cp[dst] = pred.data()[src];
      cg[dst] = gt.data()[src];
      cm[dst] = mask.data()[src];
      if (cm[dst] == 1.0 && cg[dst] > policy.depth_cap) cm[dst] = 0.0;
    }
  }
  return compute_metrics(Tensor::from_data({1, ch, cw}, std::move(cp)),
                         Tensor::from_data({1, ch, cw}, std::move(cg)),
                         Tensor::from_data({1, ch, cw}, std::move(cm)));
}

std::string report_table(const MetricReport& r) {
  char buf[256];
  std::ostringstream out;
  out << "  AbsRel   SqRel    RMSE  RMSElog   d<1.25  d<1.25^2  d<1.25^3   pixels\n";
  std::snprintf(buf, sizeof(buf),
                "%8.4f %7.4f %7.4f %8.4f %8.2f %9.2f %9.2f %8zu\n", r.abs_rel,
                r.sq_rel, r.rmse, r.rmse_log, r.delta[0], r.delta[1], r.delta[2],
                r.n_valid);
  out << buf;
  return out.str();
}

std::string report_lines(const MetricReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "abs_rel=%.17g\nsq_rel=%.17g\nrmse=%.17g\nrmse_log=%.17g\n"
                "delta1=%.17g\ndelta2=%.17g\ndelta3=%.17g\nn_valid=%zu\n",
                r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta[0], r.delta[1],
                r.delta[2], r.n_valid);
  return std::string(buf);
}

}  // namespace side
