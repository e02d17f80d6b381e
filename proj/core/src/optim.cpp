#include "side/optim.hpp"

#include <cmath>

#include "side/errors.hpp"

namespace side {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
}

AdamW::AdamW(const NamedParams& params, const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  names_.reserve(params.size());
  for (const auto& [name, t] : params) {
    names_.push_back(name);
    sizes_.push_back(t.size());
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void AdamW::step(NamedParams& params) {
  if (params.size() != names_.size()) {
    throw ShapeError("adamw: expected " + std::to_string(names_.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  ++t_;
  beta1_pow_ *= cfg_.beta1;
  beta2_pow_ *= cfg_.beta2;
  const double bc1 = 1.0 - beta1_pow_;
  const double bc2 = 1.0 - beta2_pow_;

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, tensor] = params[p];
    if (name != names_[p] || tensor.size() != sizes_[p]) {
      throw ShapeError("adamw: parameter " + std::to_string(p) + " is " + name +
                       ", optimizer was built for " + names_[p]);
    }
    static const std::vector<double> kNoGrad;
    const std::vector<double>& g = tensor.has_grad() ? tensor.grad() : kNoGrad;
    std::vector<double>& m = m_[p];
    std::vector<double>& v = v_[p];
    std::vector<double>& theta = tensor.mutable_data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      if (std::isnan(gi)) {
        throw NumericError("adamw: NaN gradient in parameter " + name +
                           " at index " + std::to_string(i));
      }
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                             cfg_.weight_decay * theta[i]);
    }
  }
}

void AdamW::export_state(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (std::size_t p = 0; p < names_.size(); ++p) {
    out.emplace_back("opt.m." + names_[p], Tensor::from_data({sizes_[p]}, m_[p]));
    out.emplace_back("opt.v." + names_[p], Tensor::from_data({sizes_[p]}, v_[p]));
  }
  out.emplace_back("opt.state",
                   Tensor::from_data({3}, {static_cast<double>(t_), beta1_pow_, beta2_pow_}));
}

void AdamW::import_state(const std::function<const Tensor*(const std::string&)>& lookup) {
  for (std::size_t p = 0; p < names_.size(); ++p) {
    for (const char* kind : {"m", "v"}) {
      const std::string key = std::string("opt.") + kind + "." + names_[p];
      const Tensor* t = lookup(key);
      if (t == nullptr) throw DataError("adamw: checkpoint is missing " + key);
      if (t->size() != sizes_[p]) {
        throw DataError("adamw: " + key + " holds " + std::to_string(t->size()) +
                        " values, parameter has " + std::to_string(sizes_[p]));
      }
      (kind[0] == 'm' ? m_[p] : v_[p]) = t->data();
    }
  }
  const Tensor* state = lookup("opt.state");
  if (state == nullptr || state->size() != 3) {
    throw DataError("adamw: checkpoint is missing opt.state");
  }
  t_ = static_cast<std::uint64_t>(state->data()[0]);
  beta1_pow_ = state->data()[1];
  beta2_pow_ = state->data()[2];
}

}  // namespace side
