#include "side/model.hpp"

#include "side/config.hpp"
#include "side/errors.hpp"

namespace side {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (image_h == 0 || image_w == 0 || image_h % 32 != 0 || image_w % 32 != 0) {
    throw ConfigError("model: image extent " + std::to_string(image_h) + "x" +
                      std::to_string(image_w) + " must be positive and divisible by 32");
  }
}

namespace {
Rng seeded(std::uint64_t seed) { return Rng(seed); }
}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_((cfg.validate(), cfg)),
      encoder_([&] {
        Rng rng = seeded(init_seed);
        return Encoder(cfg.encoder, cfg.image_h, cfg.image_w, rng);
      }()),
      decoder_([&] {
        // A separate stream keeps decoder init independent of encoder depth.
        Rng rng = seeded(Rng::mix(init_seed, 1));
        return Decoder(cfg.encoder, cfg.decoder, rng);
      }()) {}

MultiStagePrediction Model::forward(const Tensor& image, DecodeTrace* trace) const {
  return decoder_.decode(encoder_.encode(image), trace);
}

NamedParams Model::params() {
  NamedParams out;
  encoder_.params("encoder", out);
  decoder_.params("decoder", out);
  return out;
}

void Model::zero_grad() {
  for (auto& [name, t] : params()) {
    (void)name;
    t.zero_grad();
  }
}

std::map<std::string, std::string> model_config_to_map(const ModelConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["base_channels"] = std::to_string(cfg.encoder.base_channels);
  std::string blocks, heads;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i > 0) {
      blocks += ",";
      heads += ",";
    }
    blocks += std::to_string(cfg.encoder.blocks_per_stage[i]);
    heads += std::to_string(cfg.encoder.heads_per_stage[i]);
  }
  kv["blocks_per_stage"] = blocks;
  kv["heads_per_stage"] = heads;
  kv["decoder_channels"] = std::to_string(cfg.decoder.decoder_channels);
  kv["max_depth"] = format_double(cfg.decoder.max_depth);
  kv["attention_temperature"] = cfg.decoder.attention_temperature_enabled ? "1" : "0";
  kv["use_csa"] = cfg.decoder.use_csa ? "1" : "0";
  kv["use_msr"] = cfg.decoder.use_msr ? "1" : "0";
  kv["image_h"] = std::to_string(cfg.image_h);
  kv["image_w"] = std::to_string(cfg.image_w);
  return kv;
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
  try {
    ModelConfig cfg;
    cfg.encoder.base_channels = kv_size(kv, "base_channels");
    const std::string blocks_keys[2] = {"blocks_per_stage", "heads_per_stage"};
    for (int which = 0; which < 2; ++which) {
      const auto it = kv.find(blocks_keys[which]);
      if (it == kv.end()) throw ConfigError("config: missing key " + blocks_keys[which]);
      std::size_t pos = 0, idx = 0;
      std::array<std::size_t, 4> values{};
      const std::string& raw = it->second;
      while (idx < 4) {
        const std::size_t comma = raw.find(',', pos);
        const std::string item = raw.substr(pos, comma == std::string::npos
                                                     ? std::string::npos
                                                     : comma - pos);
        try {
          values[idx] = static_cast<std::size_t>(std::stoull(item));
        } catch (const std::exception&) {
          throw ConfigError("config: bad entry in " + blocks_keys[which]);
        }
        ++idx;
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (idx != 4) throw ConfigError("config: " + blocks_keys[which] + " needs 4 entries");
      (which == 0 ? cfg.encoder.blocks_per_stage : cfg.encoder.heads_per_stage) = values;
    }
    cfg.decoder.decoder_channels = kv_size(kv, "decoder_channels");
    cfg.decoder.max_depth = kv_double(kv, "max_depth");
    cfg.decoder.attention_temperature_enabled = kv_bool(kv, "attention_temperature");
    cfg.decoder.use_csa = kv_bool(kv, "use_csa");
    cfg.decoder.use_msr = kv_bool(kv, "use_msr");
    cfg.image_h = kv_size(kv, "image_h");
    cfg.image_w = kv_size(kv, "image_w");
    cfg.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: invalid stored config: ") + e.what());
  }
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(model_config_from_map(ck.config), 0);
  NamedParams params = model.params();
  apply_tensors(ck, params);
  return model;
}

}  // namespace side
