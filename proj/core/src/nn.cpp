#include "side/nn.hpp"

#include <cmath>

namespace side {

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data({fan_in, fan_out}, std::move(v), true);
}

Tensor init_const_vector(std::size_t n, double value) {
  return Tensor::full({n}, value, true);
}

}  // namespace side
