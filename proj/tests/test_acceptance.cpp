// Acceptance gate: one binary, one pass/fail line per criterion, nonzero exit
// when anything fails. Tolerances are pinned in the printed evidence so a
// regression is visible in the line itself, not just the exit code.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

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

namespace fs = std::filesystem;
using namespace side;

namespace {

// ---- plumbing ---------------------------------------------------------------

const fs::path kScratch = "acceptance_scratch";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out_file = kScratch / ("cli_out_" + std::to_string(counter++));
  const std::string cmd = std::string(SIDE_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out_file)};
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  std::size_t n = 1;
  for (const std::size_t e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Each criterion returns the evidence string on success and throws or returns
// a failure message otherwise.
using Verdict = std::pair<bool, std::string>;

// ---- 1: gradient fidelity ------------------------------------------------------

Verdict criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const CliResult r = run_cli("gradcheck --scope all");
  const double secs = seconds_since(t0);
  if (r.code != 0) return {false, "gradcheck exited " + std::to_string(r.code)};
  // trust but verify: pull the printed worst-case error out of the summary
  const std::string key = "worst ";
  const std::size_t at = r.out.find(key);
  if (at == std::string::npos) return {false, "no summary line in gradcheck output"};
  const double worst = std::strtod(r.out.c_str() + at + key.size(), nullptr);
  if (!(worst < 1e-4)) return {false, fmt("worst rel error %.3e >= 1e-4", worst)};
  if (secs >= 120.0) return {false, fmt("runtime %.1fs >= 120s", secs)};
  return {true, fmt("all primitives + csa/msr/silog/e2e, worst rel err %.3e < 1e-4, %.2fs < 120s",
                    worst, secs)};
}

// ---- 2: attention semantics ---------------------------------------------------

Verdict criterion_attention() {
  Rng rng(777);
  CsaModule csa(3, 5, 4, true, rng);
  const Tensor fine = random_tensor(rng, {3, 4, 4}, -1.0, 1.0);
  const Tensor coarse = random_tensor(rng, {5, 2, 2}, -1.0, 1.0);
  const auto result = csa.forward(fine, coarse, false);

  // Rebuild the attention matrix from the module's own projections; tying the
  // reconstruction to the forward output bitwise proves it is *the* matrix.
  NamedParams ps;
  csa.params("csa", ps);
  const auto param = [&](const std::string& needle) {
    for (const auto& [name, t] : ps) {
      if (name.find(needle) != std::string::npos) return t;
    }
    throw DataError("missing parameter " + needle);
  };
  const Tensor q = linear(chw_to_tokens(fine), param("fine.weight"), param("fine.bias"));
  const Tensor k =
      linear(chw_to_tokens(coarse), param("coarse.weight"), param("coarse.bias"));
  const Tensor att = softmax_rows(matmul(q, transpose(k)));
  const Tensor expect = tokens_to_chw(add(q, matmul(att, k)), 4, 4, 4);
  if (expect.data() != result.fused.data()) {
    return {false, "reconstructed attention path is not bitwise-identical to forward"};
  }

  double worst_row = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += att.data()[i * 4 + j];
    worst_row = std::max(worst_row, std::fabs(s - 1.0));
  }
  if (worst_row > 1e-12) return {false, fmt("row sum off by %.3e > 1e-12", worst_row)};

  // convex-combination bounds: the attended contribution stays inside the
  // per-channel range of the projected coarse vectors
  for (std::size_t c = 0; c < 4; ++c) {
    double lo = k.data()[c], hi = k.data()[c];
    for (std::size_t j = 1; j < 4; ++j) {
      lo = std::min(lo, k.data()[j * 4 + c]);
      hi = std::max(hi, k.data()[j * 4 + c]);
    }
    for (std::size_t p = 0; p < 16; ++p) {
      const double mixed =
          result.fused.data()[c * 16 + p] - result.projected.data()[c * 16 + p];
      if (mixed < lo - 1e-12 || mixed > hi + 1e-12) {
        return {false, fmt("channel %zu mix %.17g outside [%.17g, %.17g]", c, mixed, lo, hi)};
      }
    }
  }

  // permutation invariance: swapping the first two coarse positions keeps
  // every IEEE summation order, so the output must be bitwise identical;
  // an arbitrary permutation (full reversal) must agree to 1e-12
  const auto permute = [&](const std::vector<std::size_t>& order) {
    std::vector<double> v(coarse.data().size());
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t p = 0; p < 4; ++p)
        v[c * 4 + p] = coarse.data()[c * 4 + order[p]];
    return Tensor::from_data({5, 2, 2}, std::move(v));
  };
  const auto swapped = csa.forward(fine, permute({1, 0, 2, 3}), false);
  if (swapped.fused.data() != result.fused.data()) {
    return {false, "adjacent-transposition of coarse positions changed the output"};
  }
  const auto reversed = csa.forward(fine, permute({3, 2, 1, 0}), false);
  double worst_perm = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    worst_perm = std::max(
        worst_perm, std::fabs(reversed.fused.data()[i] - result.fused.data()[i]));
  }
  if (worst_perm > 1e-12) return {false, fmt("reversal moved output by %.3e", worst_perm)};

  // singleton coarse set: softmax over one position is exactly 1, so the
  // fused output is exactly Q + K (identity projections, zero biases)
  Rng rng2(778);
  CsaModule single(2, 2, 2, true, rng2);
  NamedParams sp;
  single.params("s", sp);
  for (auto& [name, t] : sp) {
    if (name.find("weight") == std::string::npos) continue;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    for (std::size_t i = 0; i < 2; ++i) t.mutable_data()[i * 2 + i] = 1.0;
  }
  const auto lone = single.forward(Tensor::from_data({2, 1, 1}, {1.0, 2.0}),
                                   Tensor::from_data({2, 1, 1}, {3.0, 4.0}), false);
  if (lone.fused.data() != std::vector<double>{4.0, 6.0}) {
    return {false, "singleton case is not exactly Q+K"};
  }
  return {true, fmt("rows sum to 1 (worst %.1e <= 1e-12), convex bounds hold, "
                    "transposition bitwise-exact, reversal within %.1e, singleton Q+K exact",
                    worst_row, worst_perm)};
}

// ---- 3: loss oracles -------------------------------------------------------------

Verdict criterion_loss() {
  // single valid pixel with pred = e * gt: d = 1, loss = sqrt(1 - lambda)
  {
    const Tensor gt = Tensor::from_data({1, 1, 2}, {2.0, 5.0});
    const Tensor pred =
        Tensor::from_data({1, 1, 2}, {2.0 * std::exp(1.0), 123.0});
    const Tensor mask = Tensor::from_data({1, 1, 2}, {1.0, 0.0});
    const double loss = silog_sqrt_loss(pred, gt, mask, 0.85).data()[0];
    const double expect = std::sqrt(0.15);
    if (std::fabs(loss - expect) > 1e-9) {
      return {false, fmt("e-ratio case %.17g vs sqrt(0.15)=%.17g", loss, expect)};
    }
  }
  // lambda = 1: rescaling the prediction must not move the loss
  Rng rng(31);
  const Tensor gt = random_tensor(rng, {1, 6, 6}, 0.5, 8.0);
  const Tensor pred = random_tensor(rng, {1, 6, 6}, 0.5, 8.0);
  const Tensor full = Tensor::full({1, 6, 6}, 1.0);
  const double base = silog_sqrt_loss(pred, gt, full, 1.0).data()[0];
  double worst_scale = 0.0;
  for (const double c : {0.5, 2.0, 10.0}) {
    const double scaled =
        silog_sqrt_loss(mul_scalar(pred, c), gt, full, 1.0).data()[0];
    worst_scale = std::max(worst_scale, std::fabs(scaled - base));
  }
  if (worst_scale > 1e-12) {
    return {false, fmt("lambda=1 scale invariance off by %.3e > 1e-12", worst_scale)};
  }
  // perfect prediction
  const double perfect = silog_sqrt_loss(gt, gt, full, 0.85).data()[0];
  if (!(perfect <= 1e-6)) {
    return {false, fmt("perfect-fit loss %.3e > 1e-6", perfect)};
  }
  return {true, fmt("sqrt(0.15) case within 1e-9, lambda=1 invariance %.1e <= 1e-12 "
                    "for c in {0.5,2,10}, perfect fit %.1e <= 1e-6",
                    worst_scale, perfect)};
}

// ---- 4: metric oracle equivalence ---------------------------------------------

// Deliberately re-implemented here, scalar loop over pixels, to stay
// independent of the library's vectorized bookkeeping.
MetricReport naive_metrics(const Tensor& pred, const Tensor& gt,
                           const Tensor& mask) {
  MetricReport r;
  double s_abs = 0, s_sq = 0, s_rmse = 0, s_log = 0;
  std::size_t n = 0, c1 = 0, c2 = 0, c3 = 0;
  for (std::size_t i = 0; i < gt.data().size(); ++i) {
    if (mask.data()[i] != 1.0) continue;
    const double p = pred.data()[i], g = gt.data()[i];
    ++n;
    s_abs += std::fabs(p - g) / g;
    s_sq += (p - g) * (p - g) / g;
    s_rmse += (p - g) * (p - g);
    const double d = std::log(p) - std::log(g);
    s_log += d * d;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) ++c1;
    if (ratio < 1.25 * 1.25) ++c2;
    if (ratio < 1.25 * 1.25 * 1.25) ++c3;
  }
  r.abs_rel = s_abs / n;
  r.sq_rel = s_sq / n;
  r.rmse = std::sqrt(s_rmse / n);
  r.rmse_log = std::sqrt(s_log / n);
  r.delta = {100.0 * c1 / n, 100.0 * c2 / n, 100.0 * c3 / n};
  r.n_valid = n;
  return r;
}

Verdict criterion_metrics() {
  double worst = 0.0;
  const auto close = [&worst](double a, double b) {
    const double err = std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
    worst = std::max(worst, err);
    return err <= 1e-12;
  };
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(Rng::mix(4242, trial));
    Tensor pred = random_tensor(rng, {1, 8, 8}, 0.2, 9.0);
    Tensor gt = random_tensor(rng, {1, 8, 8}, 0.2, 9.0);
    std::vector<double> m(64);
    for (double& x : m) x = rng.bernoulli(0.8) ? 1.0 : 0.0;
    m[rng.below(64)] = 1.0;  // keep at least one valid pixel
    const Tensor mask = Tensor::from_data({1, 8, 8}, std::move(m));
    const MetricReport a = compute_metrics(pred, gt, mask);
    const MetricReport b = naive_metrics(pred, gt, mask);
    if (!close(a.abs_rel, b.abs_rel) || !close(a.sq_rel, b.sq_rel) ||
        !close(a.rmse, b.rmse) || !close(a.rmse_log, b.rmse_log) ||
        !close(a.delta[0], b.delta[0]) || !close(a.delta[1], b.delta[1]) ||
        !close(a.delta[2], b.delta[2]) || a.n_valid != b.n_valid) {
      return {false, fmt("trial %llu diverges from scalar loop (err %.3e)",
                         static_cast<unsigned long long>(trial), worst)};
    }
  }
  // ratio exactly 1.25 sits outside delta1 (strict <) but inside delta2
  const Tensor p = Tensor::from_data({1, 1, 1}, {1.25});
  const Tensor g = Tensor::from_data({1, 1, 1}, {1.0});
  const Tensor m1 = Tensor::from_data({1, 1, 1}, {1.0});
  const MetricReport edge = compute_metrics(p, g, m1);
  if (edge.delta[0] != 0.0 || edge.delta[1] != 100.0 || edge.delta[2] != 100.0) {
    return {false, fmt("delta boundary: got [%g, %g, %g], want [0, 100, 100]",
                       edge.delta[0], edge.delta[1], edge.delta[2])};
  }
  return {true, fmt("100 random 8x8 maps match the scalar loop (worst rel diff %.1e "
                    "<= 1e-12); ratio 1.25 lands in delta2 only",
                    worst)};
}

// ---- 5: shape contract ---------------------------------------------------------

Verdict criterion_shapes() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::pair<std::size_t, std::size_t>> extents = {
      {32, 32}, {64, 32}, {96, 64}};
  for (const auto [h, w] : extents) {
    for (const std::size_t c : {4ul, 8ul}) {
      RunConfig rc;
      rc.base_channels = c;
      rc.decoder_channels = c;
      ModelConfig mc;
      mc.encoder = rc.encoder_config();
      mc.decoder = rc.decoder_config();
      mc.image_h = h;
      mc.image_w = w;
      Rng rng(Rng::mix(55, h * 1000 + w * 10 + c));
      const Encoder enc(mc.encoder, h, w, rng);
      const Decoder dec(mc.encoder, mc.decoder, rng);
      const Tensor image = random_tensor(rng, {3, h, w}, 0.0, 1.0);
      const FeaturePyramid pyr = enc.encode(image);
      for (std::size_t k = 0; k < 4; ++k) {
        const Shape want = {c << k, h >> (2 + k), w >> (2 + k)};
        if (pyr.level(k).shape() != want) {
          return {false, fmt("pyramid level %zu wrong shape at %zux%zu C=%zu", k, h, w, c)};
        }
      }
      const MultiStagePrediction pred = dec.decode(pyr);
      if (pred.depths.size() != 5) return {false, "decode did not emit 5 maps"};
      for (std::size_t k = 0; k < 5; ++k) {
        const Shape want = {1, h >> (4 - k), w >> (4 - k)};
        if (pred.depths[k].shape() != want) {
          return {false, fmt("depth map %zu wrong shape at %zux%zu C=%zu", k, h, w, c)};
        }
        for (const double v : pred.depths[k].data()) {
          if (!(v > 0.0) || !(v < mc.decoder.max_depth)) {
            return {false, fmt("depth %g outside (0, %g)", v, mc.decoder.max_depth)};
          }
        }
      }
    }
  }
  return {true, fmt("pyramid C..8C at /4../32 and 5 maps up to 1xHxW in (0, max_depth) "
                    "for 3 extents x C in {4,8}, %.1fs",
                    seconds_since(t0))};
}

// ---- 6: overfit smoke test ------------------------------------------------------

Verdict criterion_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  // materialize the dataset through the same PPM/PFM/PGM round trip the CLI
  // uses, so quantization matches end-to-end behavior
  const fs::path dir = kScratch / "overfit_data";
  fs::create_directories(dir);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 8; ++i) {
    ids.push_back(sample_id(i));
    save_sample(dir.string(), ids.back(), generate_scene(Rng::mix(2133, i), 32, 64));
  }
  write_manifest(dir.string(), ids);
  const std::vector<DepthSample> data = load_dataset(dir.string());

  RunConfig cfg;  // pinned: C=8, Cdec=8, blocks {1,1,1,1}, batch 2, lr 1e-4
  cfg.base_channels = 8;
  cfg.decoder_channels = 8;
  cfg.lr = 1e-4;
  cfg.batch_size = 2;
  cfg.steps = 2000;
  cfg.seed = 1;
  cfg.max_depth = 20.0;   // keeps the sigmoid head responsive over depths 1..9
  cfg.weight_decay = 0.0; // pure overfit: no regularizer
  cfg.validate();

  ModelConfig mc;
  mc.encoder = cfg.encoder_config();
  mc.decoder = cfg.decoder_config();
  mc.image_h = 32;
  mc.image_w = 64;
  Model model(mc, cfg.seed);
  NamedParams params = model.params();
  AdamW opt(params, cfg.train_config());

  TrainOptions opts;
  opts.optim = cfg.train_config();
  opts.loss = cfg.loss_config();
  opts.out_dir = (kScratch / "overfit_run").string();
  fs::create_directories(opts.out_dir);
  opts.config = run_config_to_map(cfg);
  const TrainResult res = train_model(model, opt, 0, data, opts);

  double early = 0.0;
  for (std::size_t i = 0; i < 10; ++i) early += res.history[i].second;
  early /= 10.0;
  const double final_loss = res.history.back().second;
  const double ratio = final_loss / early;

  std::vector<MetricReport> reports;
  for (const DepthSample& s : data) {
    reports.push_back(
        eval_protocol(model.forward(s.image).final_depth(), s.depth, s.mask,
                      EvalPolicy{}));
  }
  const double abs_rel = aggregate(reports).abs_rel;
  const double secs = seconds_since(t0);

  if (!(abs_rel < 0.05)) return {false, fmt("train AbsRel %.4f >= 0.05", abs_rel)};
  if (!(ratio < 0.10)) {
    return {false, fmt("final loss %.4f is %.1f%% of the step-10 smoothed %.4f (>= 10%%)",
                       final_loss, 100.0 * ratio, early)};
  }
  if (secs >= 600.0) return {false, fmt("runtime %.0fs >= 600s", secs)};
  return {true, fmt("2000 steps, batch 2, lr 1e-4: AbsRel %.4f < 0.05, final loss "
                    "%.3f = %.1f%% of step-10 smoothed %.3f (< 10%%), %.0fs < 600s",
                    abs_rel, final_loss, 100.0 * ratio, early, secs)};
}

// ---- 7: determinism --------------------------------------------------------------

Verdict criterion_determinism() {
  std::vector<DepthSample> data;
  for (std::size_t i = 0; i < 4; ++i) {
    data.push_back(generate_scene(Rng::mix(9, i), 32, 32));
  }
  RunConfig cfg;
  cfg.base_channels = 4;
  cfg.decoder_channels = 4;
  cfg.lr = 1e-3;
  cfg.steps = 8;
  cfg.seed = 5;
  cfg.validate();
  ModelConfig mc;
  mc.encoder = cfg.encoder_config();
  mc.decoder = cfg.decoder_config();
  mc.image_h = 32;
  mc.image_w = 32;

  const auto run = [&](const std::string& tag, std::uint64_t stop_at) {
    Model model(mc, cfg.seed);
    NamedParams params = model.params();
    RunConfig stage = cfg;
    stage.steps = stop_at;
    AdamW opt(params, stage.train_config());
    TrainOptions opts;
    opts.optim = stage.train_config();
    opts.loss = stage.loss_config();
    opts.out_dir = (kScratch / tag).string();
    fs::create_directories(opts.out_dir);
    opts.config = run_config_to_map(stage);
    opts.config["image_h"] = "32";
    opts.config["image_w"] = "32";
    const TrainResult r = train_model(model, opt, 0, data, opts);
    return std::make_tuple(r.history, r.final_checkpoint);
  };

  const auto [hist_a, ckpt_a] = run("det_a", 8);
  const auto [hist_b, ckpt_b] = run("det_b", 8);
  if (hist_a != hist_b) return {false, "identical runs produced different loss histories"};
  if (slurp(ckpt_a) != slurp(ckpt_b)) {
    return {false, "identical runs produced different checkpoints"};
  }

  // resume: stop at step 4, reload everything from the checkpoint, finish
  const auto [hist_half, ckpt_half] = run("det_half", 4);
  const Checkpoint ck = load_checkpoint(ckpt_half);
  Model resumed = model_from_checkpoint(ck);
  NamedParams params = resumed.params();
  AdamW opt(params, cfg.train_config());
  opt.import_state([&](const std::string& name) { return ck.find(name); });
  TrainOptions opts;
  opts.optim = cfg.train_config();
  opts.loss = cfg.loss_config();
  opts.out_dir = (kScratch / "det_resumed").string();
  fs::create_directories(opts.out_dir);
  opts.config = run_config_to_map(cfg);
  opts.config["image_h"] = "32";
  opts.config["image_w"] = "32";
  const TrainResult tail = train_model(resumed, opt, ck.step, data, opts);

  std::vector<std::pair<std::uint64_t, double>> stitched = hist_half;
  stitched.insert(stitched.end(), tail.history.begin(), tail.history.end());
  if (stitched != hist_a) return {false, "resumed loss history diverges"};
  if (slurp(tail.final_checkpoint) != slurp(ckpt_a)) {
    return {false, "resumed final checkpoint differs from the uninterrupted run"};
  }
  return {true, "two identical runs and a 4+4 resumed run agree bit-for-bit "
                "(loss histories and checkpoint bytes)"};
}

// ---- 8: ablation harness ---------------------------------------------------------

Verdict criterion_ablation() {
  const std::string data = (kScratch / "abl_data").string();
  if (run_cli("gen-data --out " + data + " --count 4 --seed 3 --size 32x32 --force")
          .code != 0) {
    return {false, "gen-data failed"};
  }
  const std::string out = (kScratch / "abl_out").string();
  const CliResult r = run_cli("ablate --data " + data + " --out " + out + " --steps 2");
  if (r.code != 0) return {false, "ablate exited " + std::to_string(r.code)};

  std::ifstream table(out + "/ablation.txt");
  std::string line;
  if (!std::getline(table, line) || line.find("AbsRel") == std::string::npos) {
    return {false, "table header missing"};
  }
  const std::vector<std::string> want = {"encoder-only-head", "+CSA", "+CSA+MSS",
                                         "+CSA+MSR+MSS", "+MSR+MSS"};
  for (const std::string& label : want) {
    if (!std::getline(table, line)) return {false, "table truncated at " + label};
    std::istringstream row(line);
    std::string got;
    row >> got;
    if (got != label) return {false, "row label '" + got + "' != '" + label + "'"};
    std::size_t numbers = 0;
    for (std::string token; row >> token; ++numbers) {
      std::size_t used = 0;
      std::stod(token, &used);
      if (used != token.size()) return {false, "non-numeric cell '" + token + "'"};
    }
    if (numbers != 8) {
      return {false, fmt("row %s has %zu numeric cells, want 8", label.c_str(), numbers)};
    }
  }
  return {true, "component matrix ran end to end; 5 labeled rows x 8 numeric "
                "columns parse cleanly"};
}

// ---- 9: visualization contract ----------------------------------------------------

Verdict criterion_visualization() {
  const std::string data = (kScratch / "viz_data").string();
  if (run_cli("gen-data --out " + data + " --count 2 --seed 4 --size 32x64 --force")
          .code != 0) {
    return {false, "gen-data failed"};
  }
  const std::string run = (kScratch / "viz_run").string();
  if (run_cli("train --data " + data + " --out " + run +
              " --base_channels 4 --decoder_channels 4 --steps 2")
          .code != 0) {
    return {false, "train failed"};
  }
  const std::string heat = (kScratch / "heat").string();
  const CliResult r =
      run_cli("visualize-attention --checkpoint " + run +
              "/checkpoint_final.ckpt --image " + data + "/0000.ppm --ref 2,3 --out " +
              heat);
  if (r.code != 0) return {false, "visualize-attention exited " + std::to_string(r.code)};

  for (const char* suffix : {"_before.pgm", "_after.pgm"}) {
    const std::string path = heat + suffix;
    const Tensor img = read_pgm(path);  // throws on malformed files
    if (img.shape() != Shape{1, 8, 16}) {
      return {false, std::string(suffix) + " is not the 8x16 quarter-res grid"};
    }
    if (img.data()[2 * 16 + 3] != 1.0) {
      return {false, std::string(suffix) + " reference pixel is not 255"};
    }
    const std::string rewritten = path + ".rt";
    write_pgm(rewritten, img);
    if (slurp(path) != slurp(rewritten)) {
      return {false, std::string(suffix) + " does not round-trip byte-identically"};
    }
  }
  return {true, "both heatmaps are valid 8x16 PGMs, reference pixel 255 in each, "
                "byte-identical after a read/write round trip"};
}

// ---- 10: file-format round trips ---------------------------------------------------

Verdict criterion_formats() {
  const fs::path dir = kScratch / "formats";
  fs::create_directories(dir);
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng rng(Rng::mix(88, i));
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    const Tensor rgb = random_tensor(rng, {3, h, w}, 0.0, 1.0);
    const Tensor gray = random_tensor(rng, {1, h, w}, 0.0, 1.0);
    const Tensor depth = random_tensor(rng, {1, h, w}, 0.1, 50.0);

    const auto check = [&](const char* ext, auto writer, auto reader,
                           const Tensor& t) {
      const std::string p1 = (dir / (std::to_string(i) + "_a" + ext)).string();
      const std::string p2 = (dir / (std::to_string(i) + "_b" + ext)).string();
      writer(p1, t);
      writer(p2, reader(p1));
      return slurp(p1) == slurp(p2);
    };
    if (!check(".ppm", write_ppm, read_ppm, rgb)) {
      return {false, fmt("ppm sample %llu", static_cast<unsigned long long>(i))};
    }
    if (!check(".pgm", write_pgm, read_pgm, gray)) {
      return {false, fmt("pgm sample %llu", static_cast<unsigned long long>(i))};
    }
    if (!check(".pfm", write_pfm, read_pfm, depth)) {
      return {false, fmt("pfm sample %llu", static_cast<unsigned long long>(i))};
    }
  }
  return {true, "write-read-write byte identity for 50 seeded samples each of "
                "PPM, PGM, PFM"};
}

}  // namespace

int main() {
  fs::remove_all(kScratch);
  fs::create_directories(kScratch);

  struct Entry {
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Entry> criteria = {
      {"gradient fidelity", criterion_gradients},
      {"attention semantics", criterion_attention},
      {"loss oracles", criterion_loss},
      {"metric oracle equivalence", criterion_metrics},
      {"shape contract", criterion_shapes},
      {"overfit smoke test", criterion_overfit},
      {"determinism and resume", criterion_determinism},
      {"ablation harness", criterion_ablation},
      {"visualization contract", criterion_visualization},
      {"file-format round trips", criterion_formats},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.first) ++failures;
    std::printf("criterion %2zu: %s  %s — %s\n", i + 1, v.first ? "PASS" : "FAIL",
                criteria[i].name, v.second.c_str());
    std::fflush(stdout);
  }
  if (failures == 0) {
    std::printf("acceptance: all %zu criteria passed\n", criteria.size());
  } else {
    std::printf("acceptance: %d of %zu criteria FAILED\n", failures,
                criteria.size());
  }
  return failures == 0 ? 0 : 1;
}
