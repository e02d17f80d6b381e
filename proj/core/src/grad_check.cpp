#include <algorithm>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "side/errors.hpp"
#include "side/tensor.hpp"

namespace side {

namespace {

double scalar_value(const Tensor& t) {
  if (t.size() != 1) {
    throw ShapeError("grad_check: loss must be scalar, got " + shape_str(t.shape()));
  }
  return t.data()[0];
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps) {
  if (!x.requires_grad()) {
    throw ShapeError("grad_check: input must require gradients");
  }
  Tensor& mut = const_cast<Tensor&>(x);
  Tensor loss = f(x);
  scalar_value(loss);
  mut.zero_grad();
  backward(loss);
  const std::vector<double> analytic = x.grad();

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    mut.mutable_data()[i] = saved + eps;
    const double up = scalar_value(f(x));
    mut.mutable_data()[i] = saved - eps;
    const double down = scalar_value(f(x));
    mut.mutable_data()[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

double grad_check_coords(const std::function<Tensor()>& build_loss,
                         const std::vector<std::pair<Tensor, std::size_t>>& coords,
                         double eps) {
  if (coords.empty()) {
    throw ShapeError("grad_check_coords: no coordinates to probe");
  }
  for (const auto& [t, idx] : coords) {
    if (!t.requires_grad()) {
      throw ShapeError("grad_check_coords: probed tensor must require gradients");
    }
    if (idx >= t.size()) {
      throw ShapeError("grad_check_coords: coordinate index out of range");
    }
  }

  Tensor loss = build_loss();
  scalar_value(loss);
  std::set<const void*> seen;
  for (const auto& [t, idx] : coords) {
    if (seen.insert(t.node_ptr().get()).second) const_cast<Tensor&>(t).zero_grad();
  }
  backward(loss);

  double worst = 0.0;
  for (const auto& [t, idx] : coords) {
    const double analytic = t.has_grad() ? t.grad()[idx] : 0.0;
    Tensor& mut = const_cast<Tensor&>(t);
    const double saved = t.data()[idx];
    mut.mutable_data()[idx] = saved + eps;
    const double up = scalar_value(build_loss());
    mut.mutable_data()[idx] = saved - eps;
    const double down = scalar_value(build_loss());
    mut.mutable_data()[idx] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace side
