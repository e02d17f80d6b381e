#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "side/nn.hpp"
#include "side/tensor.hpp"

namespace side {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 2;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

  void validate() const;
};

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
//   theta -= lr * (mhat/(sqrt(vhat)+eps) + wd*theta)
// Bias corrections use running beta powers so a resumed optimizer replays the
// exact arithmetic of an uninterrupted run.
class AdamW {
 public:
  AdamW(const NamedParams& params, const TrainConfig& cfg);

  // `params` must match the constructor set in names, order, and shapes.
  // Parameters outside the current loss graph (no gradient populated) are
  // treated as zero-gradient and still receive weight decay.
  void step(NamedParams& params);

  std::uint64_t steps_taken() const { return t_; }

  // State round-trips through named tensors: opt.m.<param>, opt.v.<param>,
  // and opt.state = [t, beta1^t, beta2^t].
  void export_state(std::vector<std::pair<std::string, Tensor>>& out) const;
  void import_state(const std::function<const Tensor*(const std::string&)>& lookup);

 private:
  TrainConfig cfg_;
  std::vector<std::string> names_;
  std::vector<std::size_t> sizes_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
  double beta1_pow_ = 1.0, beta2_pow_ = 1.0;
};

}  // namespace side
