#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "side/checkpoint.hpp"
#include "side/decoder.hpp"
#include "side/encoder.hpp"
#include "side/nn.hpp"

namespace side {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t image_h = 0;
  std::size_t image_w = 0;

  void validate() const;
};

// Full depth network: hierarchical encoder feeding the fusion/refinement
// decoder. Parameters are published under "encoder." / "decoder." prefixes.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed);

  MultiStagePrediction forward(const Tensor& image, DecodeTrace* trace = nullptr) const;
  NamedParams params();
  void zero_grad();

  const ModelConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  Decoder decoder_;
};

// Architecture keys stored in checkpoints so a model can be rebuilt from the
// file alone.
std::map<std::string, std::string> model_config_to_map(const ModelConfig& cfg);
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv);

// Rebuilds the architecture recorded in a checkpoint and installs its
// parameter values. Init seed is irrelevant: every parameter is overwritten.
Model model_from_checkpoint(const Checkpoint& ck);

}  // namespace side
