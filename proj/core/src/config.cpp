#include "side/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "side/errors.hpp"

namespace side {
namespace {

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

const std::string& lookup(const KvMap& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("config: missing key " + key);
  return it->second;
}

std::vector<double> split_doubles(const KvMap& kv, const std::string& key) {
  const std::string& raw = lookup(kv, key);
  std::vector<double> out;
  std::string item;
  std::stringstream ss(raw);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty()) {
      throw ConfigError("config: " + key + " has a malformed entry \"" + item + "\"");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config: " + key + " must list values");
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> size_array(const KvMap& kv, const std::string& key) {
  const std::vector<double> values = split_doubles(kv, key);
  if (values.size() != N) {
    throw ConfigError("config: " + key + " needs " + std::to_string(N) +
                      " comma-separated values, got " + std::to_string(values.size()));
  }
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (values[i] < 0.0 || values[i] != static_cast<double>(static_cast<std::size_t>(values[i]))) {
      throw ConfigError("config: " + key + " entries must be non-negative integers");
    }
    out[i] = static_cast<std::size_t>(values[i]);
  }
  return out;
}

template <typename Array>
std::string join(const Array& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ",";
    if constexpr (std::is_floating_point_v<typename Array::value_type>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not key = value: \"" + line + "\"");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config: line " + std::to_string(line_no) + " has an empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw ConfigError("config: duplicate key " + key);
    }
  }
  return kv;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("config: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_kv_text(buffer.str());
}

double kv_double(const KvMap& kv, const std::string& key) {
  const std::string& raw = lookup(kv, key);
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != raw.size() || raw.empty()) {
    throw ConfigError("config: " + key + " must be a number, got \"" + raw + "\"");
  }
  return v;
}

std::uint64_t kv_u64(const KvMap& kv, const std::string& key) {
  const std::string& raw = lookup(kv, key);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(raw, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != raw.size() || raw.empty() || raw[0] == '-') {
    throw ConfigError("config: " + key + " must be a non-negative integer, got \"" + raw + "\"");
  }
  return v;
}

std::size_t kv_size(const KvMap& kv, const std::string& key) {
  return static_cast<std::size_t>(kv_u64(kv, key));
}

bool kv_bool(const KvMap& kv, const std::string& key) {
  const std::string& raw = lookup(kv, key);
  if (raw == "1" || raw == "true") return true;
  if (raw == "0" || raw == "false") return false;
  throw ConfigError("config: " + key + " must be 0/1/true/false, got \"" + raw + "\"");
}

std::string format_double(double v) {
  char buf[64];
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    std::snprintf(buf, sizeof(buf), "%.0f", v);
    return buf;
  }
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig cfg;
  cfg.base_channels = base_channels;
  if (blocks_per_stage.size() != 4 || heads_per_stage.size() != 4) {
    throw ConfigError("config: blocks_per_stage and heads_per_stage need 4 entries");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    cfg.blocks_per_stage[i] = blocks_per_stage[i];
    cfg.heads_per_stage[i] = heads_per_stage[i];
  }
  return cfg;
}

DecoderConfig RunConfig::decoder_config() const {
  DecoderConfig cfg;
  cfg.decoder_channels = decoder_channels;
  cfg.max_depth = max_depth;
  cfg.attention_temperature_enabled = attention_temperature;
  cfg.use_csa = use_csa;
  cfg.use_msr = use_msr;
  return cfg;
}

LossConfig RunConfig::loss_config() const {
  LossConfig cfg;
  cfg.lambda = lambda;
  cfg.stage_weights = stage_weights;
  cfg.min_valid_depth = min_valid_depth;
  return cfg;
}

AugmentConfig RunConfig::augment_config() const {
  AugmentConfig cfg;
  cfg.crop_h = crop_h;
  cfg.crop_w = crop_w;
  cfg.rotate_deg = rotate_deg;
  cfg.scale_lo = scale_lo;
  cfg.scale_hi = scale_hi;
  cfg.flip_prob = flip_prob;
  cfg.seed = augment_seed;
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.lr = lr;
  cfg.weight_decay = weight_decay;
  cfg.beta1 = beta1;
  cfg.beta2 = beta2;
  cfg.adam_eps = adam_eps;
  cfg.batch_size = batch_size;
  cfg.steps = steps;
  cfg.seed = seed;
  cfg.checkpoint_every = checkpoint_every;
  return cfg;
}

void RunConfig::validate() const {
  encoder_config().validate();
  decoder_config().validate();
  loss_config().validate();
  train_config().validate();
  if (augment) {
    augment_config().validate();
    if (crop_h % 32 != 0 || crop_w % 32 != 0) {
      throw ConfigError("config: crop extent " + std::to_string(crop_h) + "x" +
                        std::to_string(crop_w) + " must be divisible by 32");
    }
  }
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "adam_eps",      "attention_temperature",
      "augment",       "augment_seed",
      "base_channels", "batch_size",
      "beta1",         "beta2",
      "blocks_per_stage", "checkpoint_every",
      "crop_h",        "crop_w",
      "decoder_channels", "flip_prob",
      "heads_per_stage",  "lambda",
      "lr",            "max_depth",
      "min_valid_depth",  "rotate_deg",
      "scale_hi",      "scale_lo",
      "seed",          "stage_weights",
      "steps",         "use_csa",
      "use_msr",       "weight_decay",
  };
  return keys;
}

RunConfig run_config_from_map(const KvMap& kv, const RunConfig& base) {
  const std::vector<std::string>& keys = run_config_keys();
  for (const auto& [key, value] : kv) {
    (void)value;
    bool known = false;
    for (const std::string& k : keys) known = known || (k == key);
    if (!known) throw ConfigError("config: unknown key " + key);
  }

  RunConfig cfg = base;
  const auto has = [&](const char* key) { return kv.count(key) != 0; };
  if (has("base_channels")) cfg.base_channels = kv_size(kv, "base_channels");
  if (has("blocks_per_stage")) {
    const auto a = size_array<4>(kv, "blocks_per_stage");
    cfg.blocks_per_stage.assign(a.begin(), a.end());
  }
  if (has("heads_per_stage")) {
    const auto a = size_array<4>(kv, "heads_per_stage");
    cfg.heads_per_stage.assign(a.begin(), a.end());
  }
  if (has("decoder_channels")) cfg.decoder_channels = kv_size(kv, "decoder_channels");
  if (has("max_depth")) cfg.max_depth = kv_double(kv, "max_depth");
  if (has("attention_temperature")) cfg.attention_temperature = kv_bool(kv, "attention_temperature");
  if (has("use_csa")) cfg.use_csa = kv_bool(kv, "use_csa");
  if (has("use_msr")) cfg.use_msr = kv_bool(kv, "use_msr");
  if (has("lambda")) cfg.lambda = kv_double(kv, "lambda");
  if (has("stage_weights")) {
    const std::vector<double> w = split_doubles(kv, "stage_weights");
    if (w.size() != 5) {
      throw ConfigError("config: stage_weights needs 5 comma-separated values, got " +
                        std::to_string(w.size()));
    }
    for (std::size_t i = 0; i < 5; ++i) cfg.stage_weights[i] = w[i];
  }
  if (has("min_valid_depth")) cfg.min_valid_depth = kv_double(kv, "min_valid_depth");
  if (has("augment")) cfg.augment = kv_bool(kv, "augment");
  if (has("crop_h")) cfg.crop_h = kv_size(kv, "crop_h");
  if (has("crop_w")) cfg.crop_w = kv_size(kv, "crop_w");
  if (has("rotate_deg")) cfg.rotate_deg = kv_double(kv, "rotate_deg");
  if (has("scale_lo")) cfg.scale_lo = kv_double(kv, "scale_lo");
  if (has("scale_hi")) cfg.scale_hi = kv_double(kv, "scale_hi");
  if (has("flip_prob")) cfg.flip_prob = kv_double(kv, "flip_prob");
  if (has("augment_seed")) cfg.augment_seed = kv_u64(kv, "augment_seed");
  if (has("lr")) cfg.lr = kv_double(kv, "lr");
  if (has("weight_decay")) cfg.weight_decay = kv_double(kv, "weight_decay");
  if (has("beta1")) cfg.beta1 = kv_double(kv, "beta1");
  if (has("beta2")) cfg.beta2 = kv_double(kv, "beta2");
  if (has("adam_eps")) cfg.adam_eps = kv_double(kv, "adam_eps");
  if (has("batch_size")) cfg.batch_size = kv_size(kv, "batch_size");
  if (has("steps")) cfg.steps = kv_size(kv, "steps");
  if (has("seed")) cfg.seed = kv_u64(kv, "seed");
  if (has("checkpoint_every")) cfg.checkpoint_every = kv_size(kv, "checkpoint_every");

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_map(parse_kv_file(path));
}

KvMap run_config_to_map(const RunConfig& cfg) {
  KvMap kv;
  kv["base_channels"] = std::to_string(cfg.base_channels);
  kv["blocks_per_stage"] = join(cfg.blocks_per_stage);
  kv["heads_per_stage"] = join(cfg.heads_per_stage);
  kv["decoder_channels"] = std::to_string(cfg.decoder_channels);
  kv["max_depth"] = format_double(cfg.max_depth);
  kv["attention_temperature"] = cfg.attention_temperature ? "1" : "0";
  kv["use_csa"] = cfg.use_csa ? "1" : "0";
  kv["use_msr"] = cfg.use_msr ? "1" : "0";
  kv["lambda"] = format_double(cfg.lambda);
  kv["stage_weights"] = join(cfg.stage_weights);
  kv["min_valid_depth"] = format_double(cfg.min_valid_depth);
  kv["augment"] = cfg.augment ? "1" : "0";
  kv["crop_h"] = std::to_string(cfg.crop_h);
  kv["crop_w"] = std::to_string(cfg.crop_w);
  kv["rotate_deg"] = format_double(cfg.rotate_deg);
  kv["scale_lo"] = format_double(cfg.scale_lo);
  kv["scale_hi"] = format_double(cfg.scale_hi);
  kv["flip_prob"] = format_double(cfg.flip_prob);
  kv["augment_seed"] = std::to_string(cfg.augment_seed);
  kv["lr"] = format_double(cfg.lr);
  kv["weight_decay"] = format_double(cfg.weight_decay);
  kv["beta1"] = format_double(cfg.beta1);
  kv["beta2"] = format_double(cfg.beta2);
  kv["adam_eps"] = format_double(cfg.adam_eps);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["steps"] = std::to_string(cfg.steps);
  kv["seed"] = std::to_string(cfg.seed);
  kv["checkpoint_every"] = std::to_string(cfg.checkpoint_every);
  return kv;
}

}  // namespace side
