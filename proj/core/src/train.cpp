#include "side/train.hpp"

#include <cstdio>
#include <fstream>

#include "side/config.hpp"
#include "side/errors.hpp"

namespace side {
namespace {

std::string checkpoint_name(std::uint64_t step, bool final) {
  if (final) return "checkpoint_final.ckpt";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06llu.ckpt",
                static_cast<unsigned long long>(step));
  return buf;
}

// One optimization step's forward pass: batch draw, augmentation, losses.
Tensor batch_loss(Model& model, const std::vector<DepthSample>& data,
                  const TrainOptions& opts, Rng& rng) {
  std::vector<std::size_t> picks(opts.optim.batch_size);
  for (std::size_t& p : picks) p = rng.below(data.size());
  Tensor total;
  for (std::size_t b = 0; b < picks.size(); ++b) {
    const DepthSample* sample = &data[picks[b]];
    DepthSample augmented;
    if (opts.augment_enabled) {
      augmented = augment(*sample, opts.aug, rng);
      sample = &augmented;
    }
    MultiStagePrediction preds = model.forward(sample->image);
    Tensor loss = mss_loss(preds, sample->depth, sample->mask, opts.loss);
    total = (b == 0) ? loss : add(total, loss);
  }
  return mul_scalar(total, 1.0 / static_cast<double>(opts.optim.batch_size));
}

}  // namespace

Checkpoint make_checkpoint(Model& model, const AdamW& opt, std::uint64_t step,
                           const std::map<std::string, std::string>& config) {
  Checkpoint ck;
  ck.step = step;
  ck.config = config;
  for (auto& [name, t] : model.params()) {
    ck.tensors.emplace_back(name, t.detach());
  }
  opt.export_state(ck.tensors);
  return ck;
}

TrainResult train_model(Model& model, AdamW& opt, std::uint64_t start_step,
                        const std::vector<DepthSample>& data,
                        const TrainOptions& opts) {
  opts.optim.validate();
  opts.loss.validate();
  if (opts.augment_enabled) opts.aug.validate();
  if (data.empty()) throw DataError("train: dataset is empty");
  if (start_step > opts.optim.steps) {
    throw ConfigError("train: start step " + std::to_string(start_step) +
                      " is past the configured " + std::to_string(opts.optim.steps) +
                      " steps");
  }

  const std::string history_path = opts.out_dir + "/loss_history.txt";
  std::ofstream history(history_path, start_step == 0
                                          ? (std::ios::out | std::ios::trunc)
                                          : (std::ios::out | std::ios::app));
  if (!history) throw DataError("train: cannot open " + history_path + " for writing");

  const auto save = [&](std::uint64_t step, bool final) {
    const std::string path = opts.out_dir + "/" + checkpoint_name(step, final);
    save_checkpoint(path, make_checkpoint(model, opt, step, opts.config));
    return path;
  };

  TrainResult result;
  NamedParams params = model.params();
  for (std::uint64_t step = start_step + 1; step <= opts.optim.steps; ++step) {
    Rng rng(Rng::mix(opts.optim.seed, step));
    Tensor loss;
    try {
      loss = batch_loss(model, data, opts, rng);
    } catch (const DataError&) {
      // Sparse masks can leave a crop with no supervision; redraw once.
      try {
        loss = batch_loss(model, data, opts, rng);
      } catch (const DataError& e) {
        throw DataError("train: step " + std::to_string(step) +
                        " drew an empty-mask batch twice: " + e.what());
      }
    }
    model.zero_grad();
    backward(loss);
    opt.step(params);
    result.history.emplace_back(step, loss.item());
    history << step << " " << format_double(loss.item()) << "\n";
    if (opts.optim.checkpoint_every > 0 && step % opts.optim.checkpoint_every == 0 &&
        step != opts.optim.steps) {
      save(step, false);
    }
  }
  history.flush();
  if (!history) throw DataError("train: write failed for " + history_path);
  result.final_checkpoint = save(opts.optim.steps, true);
  return result;
}

}  // namespace side
