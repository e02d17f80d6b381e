#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "side/data.hpp"
#include "side/decoder.hpp"
#include "side/encoder.hpp"
#include "side/loss.hpp"
#include "side/optim.hpp"

namespace side {

using KvMap = std::map<std::string, std::string>;

// Flat `key = value` text: one pair per line, '#' starts a comment, blank
// lines ignored, duplicate keys rejected.
KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);

// Typed extraction; every failure is a ConfigError naming the key.
double kv_double(const KvMap& kv, const std::string& key);
std::size_t kv_size(const KvMap& kv, const std::string& key);
std::uint64_t kv_u64(const KvMap& kv, const std::string& key);
bool kv_bool(const KvMap& kv, const std::string& key);  // 0/1/true/false

// Shortest decimal form that round-trips a double exactly.
std::string format_double(double v);

// Every tunable in one flat struct, mirroring the config-file keys 1:1.
struct RunConfig {
  // model
  std::size_t base_channels = 8;
  std::vector<std::size_t> blocks_per_stage{1, 1, 1, 1};
  std::vector<std::size_t> heads_per_stage{1, 2, 2, 4};
  std::size_t decoder_channels = 0;  // 0 = match base_channels
  double max_depth = 10.0;
  bool attention_temperature = false;
  bool use_csa = true;
  bool use_msr = true;
  // supervision
  double lambda = 0.85;
  std::array<double, 5> stage_weights{1, 1, 1, 1, 1};
  double min_valid_depth = 1e-3;
  // augmentation
  bool augment = false;
  std::size_t crop_h = 0;  // required when augment = 1
  std::size_t crop_w = 0;
  double rotate_deg = 1.0;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double flip_prob = 0.5;
  std::uint64_t augment_seed = 0;
  // optimization
  double lr = 1e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 2;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;

  EncoderConfig encoder_config() const;
  DecoderConfig decoder_config() const;
  LossConfig loss_config() const;
  AugmentConfig augment_config() const;
  TrainConfig train_config() const;
  void validate() const;
};

// The authoritative key list (sorted); keys and CLI flags are 1:1.
const std::vector<std::string>& run_config_keys();

// Applies `kv` on top of the defaults (or on top of `base`); unknown keys
// and malformed values are ConfigErrors. Values are validated as a whole.
RunConfig run_config_from_map(const KvMap& kv, const RunConfig& base = RunConfig{});
RunConfig load_run_config(const std::string& path);

// Inverse of run_config_from_map: emits every key.
KvMap run_config_to_map(const RunConfig& cfg);

}  // namespace side
