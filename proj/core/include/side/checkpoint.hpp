#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "side/nn.hpp"
#include "side/tensor.hpp"

namespace side {

// On-disk training snapshot: a text header (format tag, step counter, sorted
// config key/value pairs, tensor manifest) followed by the tensors as
// concatenated binary blocks in manifest order. Saving is deterministic, so
// save -> load -> save reproduces the file byte for byte.
struct Checkpoint {
  std::uint64_t step = 0;
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into existing parameters by name. A parameter
// absent from the checkpoint, or present with a different shape, raises a
// DataError naming it.
void apply_tensors(const Checkpoint& ck, NamedParams& params);

}  // namespace side
