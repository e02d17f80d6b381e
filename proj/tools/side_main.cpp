// side: command-line front end for the depth-estimation stack.
//
// Subcommands: gen-data, train, eval, gradcheck, ablate, visualize-attention.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
// Every failure prints a single "error: ..." line to stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "side/checkpoint.hpp"
#include "side/config.hpp"
#include "side/data.hpp"
#include "side/decoder.hpp"
#include "side/encoder.hpp"
#include "side/errors.hpp"
#include "side/image_io.hpp"
#include "side/loss.hpp"
#include "side/metrics.hpp"
#include "side/model.hpp"
#include "side/optim.hpp"
#include "side/rng.hpp"
#include "side/tensor.hpp"
#include "side/train.hpp"

namespace {

using namespace side;
namespace fs = std::filesystem;

std::string first_line(std::string s) {
  const std::size_t nl = s.find('\n');
  if (nl != std::string::npos) s.resize(nl);
  return s;
}

// Parses "123<sep>456" (e.g. --size 32x64, --ref 3,5).
std::pair<std::size_t, std::size_t> parse_pair(const std::string& text, char sep,
                                               const std::string& flag,
                                               const char* pattern) {
  const auto bad = [&] {
    return ConfigError(flag + ": expected " + pattern + ", got '" + text + "'");
  };
  const std::size_t at = text.find(sep);
  if (at == std::string::npos || at == 0 || at + 1 == text.size()) throw bad();
  const auto number = [&](const std::string& part) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw bad();
    }
    try {
      return static_cast<std::size_t>(std::stoull(part));
    } catch (const std::exception&) {
      throw bad();
    }
  };
  return {number(text.substr(0, at)), number(text.substr(at + 1))};
}

bool path_obstructed(const std::string& dir) {
  std::error_code ec;
  if (!fs::exists(dir, ec)) return false;
  if (!fs::is_directory(dir, ec)) return true;  // a plain file blocks the target
  return fs::directory_iterator(dir, ec) != fs::directory_iterator();
}

// All training data must share one extent; the model's input size is fixed.
void require_uniform_extent(const std::vector<DepthSample>& data,
                            std::size_t h, std::size_t w, const char* cmd) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].height() != h || data[i].width() != w) {
      throw DataError(std::string(cmd) + ": sample " + std::to_string(i) + " is " +
                      std::to_string(data[i].height()) + "x" +
                      std::to_string(data[i].width()) + " but the run expects " +
                      std::to_string(h) + "x" + std::to_string(w));
    }
  }
}

ModelConfig model_config_for(const RunConfig& cfg, std::size_t image_h,
                             std::size_t image_w) {
  ModelConfig mc;
  mc.encoder = cfg.encoder_config();
  mc.decoder = cfg.decoder_config();
  mc.image_h = image_h;
  mc.image_w = image_w;
  mc.validate();
  return mc;
}

TrainOptions train_options_for(const RunConfig& cfg, const std::string& out_dir,
                               std::size_t image_h, std::size_t image_w) {
  TrainOptions opts;
  opts.optim = cfg.train_config();
  opts.loss = cfg.loss_config();
  opts.aug = cfg.augment_config();
  opts.augment_enabled = cfg.augment;
  opts.out_dir = out_dir;
  opts.config = run_config_to_map(cfg);
  opts.config["image_h"] = std::to_string(image_h);
  opts.config["image_w"] = std::to_string(image_w);
  return opts;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::size_t count = 8;
  std::uint64_t seed = 0;
  std::string size = "32x64";
  bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  const auto [h, w] = parse_pair(a.size, 'x', "--size", "HxW");
  if (a.count == 0) throw ConfigError("gen-data: --count must be at least 1");
  if (!a.force && path_obstructed(a.out)) {
    throw ConfigError("gen-data: output path '" + a.out +
                      "' already exists and is not empty (pass --force to overwrite)");
  }
  fs::create_directories(a.out);
  std::vector<std::string> ids;
  ids.reserve(a.count);
  for (std::size_t i = 0; i < a.count; ++i) {
    const DepthSample sample = generate_scene(Rng::mix(a.seed, i), h, w);
    ids.push_back(sample_id(i));
    save_sample(a.out, ids.back(), sample);
  }
  write_manifest(a.out, ids);
  std::cout << "wrote " << a.count << " samples (" << h << "x" << w << ") to "
            << a.out << "\n";
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  KvMap overrides;  // config keys given as CLI flags
};

bool same_model_shape(const RunConfig& a, const RunConfig& b) {
  return a.base_channels == b.base_channels &&
         a.blocks_per_stage == b.blocks_per_stage &&
         a.heads_per_stage == b.heads_per_stage &&
         a.decoder_channels == b.decoder_channels && a.max_depth == b.max_depth &&
         a.attention_temperature == b.attention_temperature &&
         a.use_csa == b.use_csa && a.use_msr == b.use_msr;
}

int cmd_train(const TrainArgs& a) {
  const std::vector<DepthSample> data = load_dataset(a.data);

  RunConfig cfg;
  std::optional<Checkpoint> ck;
  std::uint64_t start_step = 0;
  std::size_t image_h = 0, image_w = 0;

  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    KvMap stored;
    for (const std::string& key : run_config_keys()) {
      const auto it = ck->config.find(key);
      if (it != ck->config.end()) stored[key] = it->second;
    }
    const RunConfig stored_cfg = run_config_from_map(stored);
    cfg = run_config_from_map(a.overrides, stored_cfg);
    if (!same_model_shape(stored_cfg, cfg)) {
      throw ConfigError("train: model-shape keys cannot change when resuming");
    }
    image_h = kv_size(ck->config, "image_h");
    image_w = kv_size(ck->config, "image_w");
    start_step = ck->step;
  } else {
    const RunConfig base =
        a.config.empty() ? RunConfig{} : load_run_config(a.config);
    cfg = run_config_from_map(a.overrides, base);
    if (cfg.augment) {
      if (cfg.crop_h == 0 || cfg.crop_w == 0) {
        throw ConfigError(
            "train: augment=1 needs crop_h and crop_w to fix the model input size");
      }
      image_h = cfg.crop_h;
      image_w = cfg.crop_w;
    } else {
      image_h = data.front().height();
      image_w = data.front().width();
    }
  }
  if (!cfg.augment) require_uniform_extent(data, image_h, image_w, "train");

  const ModelConfig mc = model_config_for(cfg, image_h, image_w);
  Model model = ck ? model_from_checkpoint(*ck) : Model(mc, cfg.seed);
  NamedParams params = model.params();
  AdamW opt(params, cfg.train_config());
  if (ck) {
    opt.import_state([&](const std::string& name) { return ck->find(name); });
  }

  fs::create_directories(a.out);
  const TrainOptions opts = train_options_for(cfg, a.out, image_h, image_w);
  std::cout << "training steps " << start_step + 1 << ".." << cfg.steps << " on "
            << data.size() << " samples (" << image_h << "x" << image_w << ")\n";
  const TrainResult res = train_model(model, opt, start_step, data, opts);
  if (!res.history.empty()) {
    std::cout << "step " << res.history.back().first << " loss "
              << format_double(res.history.back().second) << "\n";
  }
  std::cout << "final checkpoint: " << res.final_checkpoint << "\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  double depth_cap = 80.0;
  std::string crop = "0x0";  // HxW center crop; 0x0 keeps the full frame
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Model model = model_from_checkpoint(ck);
  const std::vector<DepthSample> data = load_dataset(a.data);

  EvalPolicy policy;
  policy.depth_cap = a.depth_cap;
  std::tie(policy.crop_h, policy.crop_w) = parse_pair(a.crop, 'x', "--crop", "HxW");

  std::vector<MetricReport> reports;
  reports.reserve(data.size());
  for (const DepthSample& s : data) {
    const MultiStagePrediction pred = model.forward(s.image);
    reports.push_back(eval_protocol(pred.final_depth(), s.depth, s.mask, policy));
  }
  const MetricReport agg = aggregate(reports);
  std::cout << "evaluated " << data.size() << " images\n"
            << report_table(agg) << report_lines(agg);
  return 0;
}

// ---- gradcheck -----------------------------------------------------------------

struct GradCheck {
  std::string name;
  std::function<double()> run;
};

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi,
                     bool requires_grad) {
  std::size_t n = 1;
  for (const std::size_t e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Random constant with the same shape as `like`; sum(mul(y, W)) turns any op
// output into a scalar whose gradient exercises every output coordinate.
Tensor weight_like(const Tensor& like, Rng& rng) {
  std::vector<double> v(like.data().size());
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(like.shape(), std::move(v));
}

// Inputs with |x| >= margin, for ops with a kink at zero.
Tensor random_signed_away_from_zero(Rng& rng, Shape shape, double margin,
                                    double span) {
  std::size_t n = 1;
  for (const std::size_t e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) {
    const double mag = rng.uniform(margin, margin + span);
    x = rng.bernoulli(0.5) ? mag : -mag;
  }
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

std::vector<GradCheck> op_checks() {
  std::vector<GradCheck> checks;
  std::uint64_t salt = 0;
  const auto reg = [&checks, &salt](const std::string& name, auto make) {
    Rng rng(Rng::mix(0x9e3779b97f4a7c15ull, salt++));
    checks.push_back({std::string("op.") + name, make(rng)});
  };

  // Unary elementwise maps: weigh the output so every coordinate matters.
  const auto unary = [](Rng rng, Tensor x, Tensor (*op)(const Tensor&)) {
    Tensor w = weight_like(x, rng);
    return [op, x, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(op(t), w)); }, x);
    };
  };
  reg("exp", [&](Rng rng) {
    return unary(rng, random_tensor(rng, {3, 4}, -1.5, 1.5, true), &side::exp);
  });
  reg("log", [&](Rng rng) {
    return unary(rng, random_tensor(rng, {3, 4}, 0.4, 3.0, true), &side::log);
  });
  reg("sqrt", [&](Rng rng) {
    return unary(rng, random_tensor(rng, {3, 4}, 0.3, 4.0, true), &side::sqrt);
  });
  reg("sigmoid", [&](Rng rng) {
    return unary(rng, random_tensor(rng, {3, 4}, -3.0, 3.0, true), &side::sigmoid);
  });
  reg("gelu", [&](Rng rng) {
    return unary(rng, random_tensor(rng, {3, 4}, -2.0, 2.0, true), &side::gelu);
  });
  reg("relu", [&](Rng rng) {  // keep clear of the kink at zero
    return unary(rng, random_signed_away_from_zero(rng, {3, 4}, 0.4, 1.3),
                 &side::relu);
  });
  reg("negate", [&](Rng rng) {
    return unary(rng, random_tensor(rng, {3, 4}, -2.0, 2.0, true), &side::negate);
  });

  reg("add", [&](Rng rng) {
    Tensor a = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor b = random_tensor(rng, {3, 4}, -2.0, 2.0, false);
    Tensor w = weight_like(a, rng);
    return [a, b, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(add(t, b), w)); }, a);
    };
  });
  reg("sub", [&](Rng rng) {
    Tensor a = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor b = random_tensor(rng, {3, 4}, -2.0, 2.0, false);
    Tensor w = weight_like(a, rng);
    return [a, b, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(sub(b, t), w)); }, a);
    };
  });
  reg("mul", [&](Rng rng) {
    Tensor a = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor b = random_tensor(rng, {3, 4}, 0.5, 2.0, false);
    Tensor w = weight_like(a, rng);
    return [a, b, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(mul(t, b), w)); }, a);
    };
  });
  reg("div_numerator", [&](Rng rng) {
    Tensor a = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor b = random_tensor(rng, {3, 4}, 0.5, 2.0, false);
    Tensor w = weight_like(a, rng);
    return [a, b, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(div(t, b), w)); }, a);
    };
  });
  reg("div_denominator", [&](Rng rng) {
    Tensor a = random_tensor(rng, {3, 4}, -2.0, 2.0, false);
    Tensor b = random_tensor(rng, {3, 4}, 0.5, 2.0, true);
    Tensor w = weight_like(b, rng);
    return [a, b, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(div(a, t), w)); }, b);
    };
  });
  reg("add_scalar", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor w = weight_like(x, rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(add_scalar(t, 0.7), w)); }, x);
    };
  });
  reg("mul_scalar", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor w = weight_like(x, rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(mul_scalar(t, -1.3), w)); }, x);
    };
  });

  reg("matmul_lhs", [&](Rng rng) {
    Tensor a = random_tensor(rng, {3, 4}, -1.0, 1.0, true);
    Tensor b = random_tensor(rng, {4, 2}, -1.0, 1.0, false);
    Tensor w = weight_like(matmul(a, b), rng);
    return [a, b, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(matmul(t, b), w)); },
                        a);
    };
  });
  reg("matmul_rhs", [&](Rng rng) {
    Tensor a = random_tensor(rng, {3, 4}, -1.0, 1.0, false);
    Tensor b = random_tensor(rng, {4, 2}, -1.0, 1.0, true);
    Tensor w = weight_like(matmul(a, b), rng);
    return [a, b, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(matmul(a, t), w)); },
                        b);
    };
  });
  reg("transpose", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor w = weight_like(transpose(x), rng);
    return [x, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(transpose(t), w)); },
                        x);
    };
  });
  reg("softmax_rows", [&](Rng rng) {
    Tensor x = random_tensor(rng, {4, 5}, -2.0, 2.0, true);
    Tensor w = weight_like(x, rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(softmax_rows(t), w)); }, x);
    };
  });
  reg("linear_input", [&](Rng rng) {
    Tensor x = random_tensor(rng, {6, 3}, -1.0, 1.0, true);
    Tensor wt = random_tensor(rng, {3, 4}, -1.0, 1.0, false);
    Tensor b = random_tensor(rng, {4}, -0.5, 0.5, false);
    Tensor w = weight_like(linear(x, wt, b), rng);
    return [x, wt, b, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(linear(t, wt, b), w)); }, x);
    };
  });
  reg("linear_weight", [&](Rng rng) {
    Tensor x = random_tensor(rng, {6, 3}, -1.0, 1.0, false);
    Tensor wt = random_tensor(rng, {3, 4}, -1.0, 1.0, true);
    Tensor b = random_tensor(rng, {4}, -0.5, 0.5, false);
    Tensor w = weight_like(linear(x, wt, b), rng);
    return [x, wt, b, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(linear(x, t, b), w)); }, wt);
    };
  });
  reg("linear_bias", [&](Rng rng) {
    Tensor x = random_tensor(rng, {6, 3}, -1.0, 1.0, false);
    Tensor wt = random_tensor(rng, {3, 4}, -1.0, 1.0, false);
    Tensor b = random_tensor(rng, {4}, -0.5, 0.5, true);
    Tensor w = weight_like(linear(x, wt, b), rng);
    return [x, wt, b, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(linear(x, wt, t), w)); }, b);
    };
  });
  reg("bilinear_upsample", [&](Rng rng) {
    Tensor x = random_tensor(rng, {2, 3, 4}, -1.0, 1.0, true);
    Tensor w = weight_like(bilinear_upsample(x, 2), rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(bilinear_upsample(t, 2), w)); }, x);
    };
  });

  reg("sum", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    return [x]() { return grad_check([](const Tensor& t) { return sum(t); }, x); };
  });
  reg("sum_axes", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor w = weight_like(sum(x, {0}), rng);
    return [x, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(sum(t, {0}), w)); },
                        x);
    };
  });
  reg("mean", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    return [x]() { return grad_check([](const Tensor& t) { return mean(t); }, x); };
  });
  reg("mean_axes", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor w = weight_like(mean(x, {1}), rng);
    return [x, w]() {
      return grad_check([&](const Tensor& t) { return sum(mul(mean(t, {1}), w)); },
                        x);
    };
  });
  reg("masked_sum", [&](Rng rng) {
    Tensor x = random_tensor(rng, {1, 4, 4}, 1.0, 5.0, true);
    std::vector<double> m(16, 1.0);
    for (const std::size_t i : {2ul, 7ul, 11ul}) m[i] = 0.0;
    Tensor mask = Tensor::from_data({1, 4, 4}, std::move(m));
    return [x, mask]() {
      return grad_check([&](const Tensor& t) { return masked_sum(t, mask); }, x);
    };
  });
  reg("reshape", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 4}, -2.0, 2.0, true);
    Tensor w = weight_like(x, rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) {
            return sum(mul(reshape(t, {2, 6}), reshape(w, {2, 6})));
          },
          x);
    };
  });
  reg("slice_cols", [&](Rng rng) {
    Tensor x = random_tensor(rng, {4, 6}, -2.0, 2.0, true);
    Tensor w = weight_like(slice_cols(x, 1, 3), rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(slice_cols(t, 1, 3), w)); }, x);
    };
  });
  reg("concat_cols", [&](Rng rng) {
    Tensor a = random_tensor(rng, {4, 2}, -2.0, 2.0, true);
    Tensor b = random_tensor(rng, {4, 3}, -2.0, 2.0, false);
    Tensor w = weight_like(concat_cols({a, b}), rng);
    return [a, b, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(concat_cols({t, b}), w)); }, a);
    };
  });
  reg("layer_norm_input", [&](Rng rng) {
    Tensor x = random_tensor(rng, {6, 4}, -2.0, 2.0, true);
    Tensor gamma = random_tensor(rng, {4}, 0.5, 1.5, false);
    Tensor beta = random_tensor(rng, {4}, -0.5, 0.5, false);
    Tensor w = weight_like(x, rng);
    return [x, gamma, beta, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(layer_norm(t, gamma, beta), w)); },
          x);
    };
  });
  reg("layer_norm_gamma", [&](Rng rng) {
    Tensor x = random_tensor(rng, {6, 4}, -2.0, 2.0, false);
    Tensor gamma = random_tensor(rng, {4}, 0.5, 1.5, true);
    Tensor beta = random_tensor(rng, {4}, -0.5, 0.5, false);
    Tensor w = weight_like(x, rng);
    return [x, gamma, beta, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(layer_norm(x, t, beta), w)); },
          gamma);
    };
  });
  reg("layer_norm_beta", [&](Rng rng) {
    Tensor x = random_tensor(rng, {6, 4}, -2.0, 2.0, false);
    Tensor gamma = random_tensor(rng, {4}, 0.5, 1.5, false);
    Tensor beta = random_tensor(rng, {4}, -0.5, 0.5, true);
    Tensor w = weight_like(x, rng);
    return [x, gamma, beta, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(layer_norm(x, gamma, t), w)); },
          beta);
    };
  });
  reg("chw_to_tokens", [&](Rng rng) {
    Tensor x = random_tensor(rng, {3, 2, 4}, -2.0, 2.0, true);
    Tensor w = weight_like(chw_to_tokens(x), rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(chw_to_tokens(t), w)); }, x);
    };
  });
  reg("tokens_to_chw", [&](Rng rng) {
    Tensor x = random_tensor(rng, {8, 3}, -2.0, 2.0, true);
    Tensor w = weight_like(tokens_to_chw(x, 3, 2, 4), rng);
    return [x, w]() {
      return grad_check(
          [&](const Tensor& t) { return sum(mul(tokens_to_chw(t, 3, 2, 4), w)); },
          x);
    };
  });
  return checks;
}

// Spread coordinate probes across every parameter tensor, round-robin.
std::vector<std::pair<Tensor, std::size_t>> spread_coords(const NamedParams& params,
                                                          std::size_t count,
                                                          Rng& rng) {
  std::vector<std::pair<Tensor, std::size_t>> coords;
  coords.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& [name, tensor] = params[i % params.size()];
    coords.emplace_back(tensor, rng.below(tensor.data().size()));
  }
  return coords;
}

std::vector<GradCheck> module_checks() {
  std::vector<GradCheck> checks;

  {  // cross-scale attention: fine 3ch 4x4, coarse 5ch 2x2, shared width 4
    Rng rng(101);
    auto csa = std::make_shared<CsaModule>(3, 5, 4, true, rng);
    Tensor fine = random_tensor(rng, {3, 4, 4}, -1.0, 1.0, true);
    Tensor coarse = random_tensor(rng, {5, 2, 2}, -1.0, 1.0, true);
    Tensor w = weight_like(csa->forward(fine, coarse, false).fused, rng);
    const auto loss_wrt = [csa, w](const Tensor& f, const Tensor& c, bool temp) {
      return sum(mul(csa->forward(f, c, temp).fused, w));
    };
    checks.push_back({"module.csa_fine", [=]() {
                        return grad_check(
                            [&](const Tensor& t) { return loss_wrt(t, coarse, false); },
                            fine);
                      }});
    checks.push_back({"module.csa_coarse", [=]() {
                        return grad_check(
                            [&](const Tensor& t) { return loss_wrt(fine, t, false); },
                            coarse);
                      }});
    checks.push_back({"module.csa_temperature", [=]() {
                        return grad_check(
                            [&](const Tensor& t) { return loss_wrt(t, coarse, true); },
                            fine);
                      }});
    NamedParams params;
    csa->params("csa", params);
    Rng coord_rng(102);
    auto coords = spread_coords(params, 10, coord_rng);
    checks.push_back({"module.csa_params", [=]() {
                        return grad_check_coords(
                            [&]() { return loss_wrt(fine, coarse, false); }, coords);
                      }});
  }

  {  // refinement step: 4 channels, coarse 3x3 -> 6x6, optional skip
    Rng rng(201);
    auto msr = std::make_shared<MsrModule>(4, rng);
    Tensor coarse = random_tensor(rng, {4, 3, 3}, -1.0, 1.0, true);
    Tensor skip = random_tensor(rng, {4, 6, 6}, -1.0, 1.0, true);
    auto probe = msr->forward(coarse, &skip, 10.0);
    Tensor wf = weight_like(probe.first, rng);
    Tensor wd = weight_like(probe.second, rng);
    const auto loss_wrt = [msr, wf, wd](const Tensor& c, const Tensor* s) {
      auto [features, depth] = msr->forward(c, s, 10.0);
      return add(sum(mul(features, wf)), sum(mul(depth, wd)));
    };
    checks.push_back({"module.msr_coarse", [=]() {
                        return grad_check(
                            [&](const Tensor& t) { return loss_wrt(t, &skip); },
                            coarse);
                      }});
    checks.push_back({"module.msr_skip", [=]() {
                        return grad_check(
                            [&](const Tensor& t) { return loss_wrt(coarse, &t); },
                            skip);
                      }});
    checks.push_back({"module.msr_no_skip", [=]() {
                        return grad_check(
                            [&](const Tensor& t) { return loss_wrt(t, nullptr); },
                            coarse);
                      }});
    NamedParams params;
    msr->params("msr", params);
    Rng coord_rng(202);
    auto coords = spread_coords(params, 10, coord_rng);
    checks.push_back({"module.msr_params", [=]() {
                        return grad_check_coords(
                            [&]() { return loss_wrt(coarse, &skip); }, coords);
                      }});
  }

  {  // scale-invariant log loss with a partial mask
    Rng rng(301);
    Tensor pred = random_tensor(rng, {1, 4, 4}, 0.5, 6.0, true);
    Tensor gt = random_tensor(rng, {1, 4, 4}, 0.5, 6.0, false);
    std::vector<double> m(16, 1.0);
    for (const std::size_t i : {1ul, 6ul, 12ul}) m[i] = 0.0;
    Tensor mask = Tensor::from_data({1, 4, 4}, std::move(m));
    checks.push_back({"module.silog", [=]() {
                        return grad_check(
                            [&](const Tensor& t) {
                              return silog_sqrt_loss(t, gt, mask, 0.85);
                            },
                            pred);
                      }});
  }
  return checks;
}

std::vector<GradCheck> e2e_checks() {
  std::vector<GradCheck> checks;
  RunConfig rc;
  rc.base_channels = 4;
  rc.decoder_channels = 4;
  const ModelConfig mc = model_config_for(rc, 32, 32);
  auto model = std::make_shared<Model>(mc, 11);
  const DepthSample sample = generate_scene(7, 32, 32);
  const LossConfig loss_cfg;
  const auto build_loss = [model, sample, loss_cfg]() {
    return mss_loss(model->forward(sample.image), sample.depth, sample.mask,
                    loss_cfg);
  };
  Rng coord_rng(401);
  const NamedParams params = model->params();
  auto coords = spread_coords(params, 10, coord_rng);
  checks.push_back({"e2e.mss_slice", [=]() {
                      return grad_check_coords(build_loss, coords);
                    }});
  return checks;
}

int cmd_gradcheck(const std::string& scope) {
  std::vector<GradCheck> checks;
  const auto take = [&](std::vector<GradCheck> more) {
    std::move(more.begin(), more.end(), std::back_inserter(checks));
  };
  if (scope == "op" || scope == "all") take(op_checks());
  if (scope == "module" || scope == "all") take(module_checks());
  if (scope == "e2e" || scope == "all") take(e2e_checks());

  constexpr double kTolerance = 1e-4;
  std::size_t failures = 0;
  double worst = 0.0;
  for (const GradCheck& check : checks) {
    const double err = check.run();
    const bool ok = std::isfinite(err) && err <= kTolerance;
    if (!ok) ++failures;
    worst = std::max(worst, err);
    std::printf("%-28s max_rel %.3e %s\n", check.name.c_str(), err,
                ok ? "ok" : "FAIL");
  }
  std::printf("gradcheck: %zu checks, worst %.3e, tolerance %.0e\n", checks.size(),
              worst, kTolerance);
  if (failures > 0) {
    throw NumericError("gradcheck: " + std::to_string(failures) + " of " +
                       std::to_string(checks.size()) + " checks exceeded 1e-4");
  }
  return 0;
}

// ---- ablate --------------------------------------------------------------------

struct AblateArgs {
  std::string data;
  std::string out;
  std::size_t steps = 60;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct AblateRow {
  std::string label;
  std::string slug;
  bool use_csa;
  bool use_msr;
  bool multi_stage;  // all-stage supervision vs final map only
};

int cmd_ablate(const AblateArgs& a) {
  const std::vector<DepthSample> data = load_dataset(a.data);
  const std::size_t image_h = data.front().height();
  const std::size_t image_w = data.front().width();
  require_uniform_extent(data, image_h, image_w, "ablate");
  fs::create_directories(a.out);

  const std::vector<AblateRow> rows = {
      {"encoder-only-head", "encoder-only-head", false, false, false},
      {"+CSA", "csa", true, false, false},
      {"+CSA+MSS", "csa-mss", true, false, true},
      {"+CSA+MSR+MSS", "csa-msr-mss", true, true, true},
      {"+MSR+MSS", "msr-mss", false, true, true},
  };

  std::vector<std::string> lines;
  lines.push_back(
      "component           AbsRel    SqRel     RMSE  RMSElog     d1     d2     d3"
      "     loss");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AblateRow& row = rows[i];
    RunConfig cfg;
    cfg.base_channels = 4;
    cfg.decoder_channels = 4;
    cfg.use_csa = row.use_csa;
    cfg.use_msr = row.use_msr;
    if (!row.multi_stage) cfg.stage_weights = {0, 0, 0, 0, 1};
    cfg.lr = a.lr;
    cfg.steps = a.steps;
    cfg.seed = a.seed;
    cfg.validate();

    const ModelConfig mc = model_config_for(cfg, image_h, image_w);
    Model model(mc, cfg.seed);
    NamedParams params = model.params();
    AdamW opt(params, cfg.train_config());
    const std::string row_dir =
        (fs::path(a.out) / ("row" + std::to_string(i + 1) + "-" + row.slug))
            .string();
    fs::create_directories(row_dir);
    const TrainResult res = train_model(
        model, opt, 0, data, train_options_for(cfg, row_dir, image_h, image_w));

    std::vector<MetricReport> reports;
    for (const DepthSample& s : data) {
      reports.push_back(eval_protocol(model.forward(s.image).final_depth(), s.depth,
                                      s.mask, EvalPolicy{}));
    }
    const MetricReport m = aggregate(reports);
    const double final_loss = res.history.empty() ? 0.0 : res.history.back().second;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%-17s %8.4f %8.4f %8.4f %8.4f %6.1f %6.1f %6.1f %8.4f",
                  row.label.c_str(), m.abs_rel, m.sq_rel, m.rmse, m.rmse_log,
                  m.delta[0], m.delta[1], m.delta[2], final_loss);
    lines.push_back(buf);
    std::cerr << "[" << i + 1 << "/" << rows.size() << "] " << row.label
              << " done\n";
  }

  std::string table;
  for (const std::string& line : lines) table += line + "\n";
  table +=
      "toy-scale training run on the provided samples; numbers are artifact "
      "sanity values, not benchmark results\n";
  const std::string table_path = (fs::path(a.out) / "ablation.txt").string();
  std::ofstream out_file(table_path, std::ios::binary);
  out_file << table;
  if (!out_file) throw DataError("ablate: cannot write " + table_path);
  std::cout << table << "wrote " << table_path << "\n";
  return 0;
}

// ---- visualize-attention ---------------------------------------------------------

struct VizArgs {
  std::string checkpoint;
  std::string image;
  std::string ref;
  std::string out;
};

int cmd_visualize(const VizArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Model model = model_from_checkpoint(ck);
  const Tensor image = read_ppm(a.image);
  const auto [row, col] = parse_pair(a.ref, ',', "--ref", "R,C");

  DecodeTrace trace;
  model.forward(image, &trace);
  // Finest fusion level: quarter-resolution features before and after the
  // cross-scale attention contribution.
  const auto heat = receptive_field_map(trace.projected.front(),
                                        trace.fused.front(), row, col);

  std::string stem = a.out;
  if (stem.size() > 4 && stem.compare(stem.size() - 4, 4, ".pgm") == 0) {
    stem.resize(stem.size() - 4);
  }
  const std::string before_path = stem + "_before.pgm";
  const std::string after_path = stem + "_after.pgm";
  const auto as_plane = [](const Tensor& t) {
    return Tensor::from_data({1, t.extent(0), t.extent(1)}, t.data());
  };
  write_pgm(before_path, as_plane(heat.first));
  write_pgm(after_path, as_plane(heat.second));
  std::cout << "wrote " << before_path << " and " << after_path << " ("
            << heat.first.extent(0) << "x" << heat.first.extent(1)
            << " feature grid)\n";
  return 0;
}

// ---- dispatch ---------------------------------------------------------------------

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << first_line(e.what()) << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << first_line(e.what()) << "\n";
    return 3;
  } catch (const DataError& e) {  // includes ParseError
    std::cerr << "error: " << first_line(e.what()) << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << first_line(e.what()) << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << first_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << first_line(e.what()) << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"side: monocular depth estimation with a hierarchical transformer "
               "encoder and cross-scale attention decoder"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Write a deterministic synthetic RGB-D dataset");
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--count", gen_args.count, "number of samples")
      ->capture_default_str();
  gen->add_option("--seed", gen_args.seed, "generator seed")->capture_default_str();
  gen->add_option("--size", gen_args.size, "sample extent HxW (multiples of 32)")
      ->capture_default_str();
  gen->add_flag("--force", gen_args.force, "overwrite a non-empty directory");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--config", train_args.config,
                    "key=value config file (defaults apply when omitted)");
  train->add_option("--data", train_args.data, "dataset directory")->required();
  train->add_option("--out", train_args.out, "run directory for checkpoints")
      ->required();
  train->add_option("--resume", train_args.resume,
                    "checkpoint to continue from (model keys come from it)");
  const KvMap config_defaults = run_config_to_map(RunConfig{});
  for (const std::string& key : run_config_keys()) {
    train->add_option_function<std::string>(
        "--" + key,
        [&train_args, key](const std::string& value) {
          train_args.overrides[key] = value;
        },
        "config key " + key + " (default " + config_defaults.at(key) + ")");
  }

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval", "Evaluate a checkpoint: prints the metric table and key=value lines");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")
      ->required();
  eval->add_option("--data", eval_args.data, "dataset directory")->required();
  eval->add_option("--depth-cap", eval_args.depth_cap,
                   "invalidate ground truth above this depth")
      ->capture_default_str();
  eval->add_option("--crop", eval_args.crop, "center crop HxW (0x0 = full frame)")
      ->capture_default_str();

  std::string gradcheck_scope = "all";
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Compare analytic gradients against central finite differences");
  gradcheck
      ->add_option("--scope", gradcheck_scope, "which checks to run")
      ->check(CLI::IsMember({"op", "module", "e2e", "all"}))
      ->capture_default_str();

  AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "Train the component matrix at toy scale and emit a table");
  ablate->add_option("--data", ablate_args.data, "dataset directory")->required();
  ablate->add_option("--out", ablate_args.out, "output directory")->required();
  ablate->add_option("--steps", ablate_args.steps, "training steps per row")
      ->capture_default_str();
  ablate->add_option("--lr", ablate_args.lr, "learning rate for every row")
      ->capture_default_str();
  ablate->add_option("--seed", ablate_args.seed, "init and sampling seed")
      ->capture_default_str();

  VizArgs viz_args;
  CLI::App* viz = app.add_subcommand(
      "visualize-attention",
      "Write before/after receptive-field heatmaps for one reference position");
  viz->add_option("--checkpoint", viz_args.checkpoint, "checkpoint file")
      ->required();
  viz->add_option("--image", viz_args.image, "input PPM image")->required();
  viz->add_option("--ref", viz_args.ref,
                  "reference position R,C in the quarter-resolution feature grid")
      ->required();
  viz->add_option("--out", viz_args.out,
                  "output path; writes <out>_before.pgm and <out>_after.pgm")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << first_line(e.what()) << "\n";
    return 1;
  }

  return run_guarded([&]() -> int {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_scope);
    if (ablate->parsed()) return cmd_ablate(ablate_args);
    if (viz->parsed()) return cmd_visualize(viz_args);
    return 1;  // unreachable: require_subcommand(1)
  });
}
