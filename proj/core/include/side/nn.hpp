#pragma once

#include <string>
#include <utility>
#include <vector>

#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side {

// Ordered (name, parameter) pairs; ordering is the checkpoint manifest order.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Weight matrices draw uniformly from ±1/√fan_in; vectors start at a constant
// (0 for biases and positional tables, 1 for norm gains).
Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor init_const_vector(std::size_t n, double value);

}  // namespace side
