#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "side/data.hpp"
#include "side/loss.hpp"
#include "side/model.hpp"
#include "side/optim.hpp"

namespace side {

struct TrainOptions {
  TrainConfig optim;
  LossConfig loss;
  AugmentConfig aug;
  bool augment_enabled = false;
  std::string out_dir;                        // checkpoints + loss history
  std::map<std::string, std::string> config;  // stored in every checkpoint
};

struct TrainResult {
  std::vector<std::pair<std::uint64_t, double>> history;  // (step, batch loss)
  std::string final_checkpoint;                            // path written last
};

// Runs steps start_step+1 .. optim.steps. Each step draws its whole random
// stream from mix(seed, step), so a resumed run replays the uninterrupted
// trajectory bit for bit. Loss history appends to <out>/loss_history.txt
// (truncated when starting fresh); checkpoints go to <out>/checkpoint_*.ckpt
// with a final one always written.
TrainResult train_model(Model& model, AdamW& opt, std::uint64_t start_step,
                        const std::vector<DepthSample>& data,
                        const TrainOptions& opts);

// Snapshot of model + optimizer, ready for save_checkpoint.
Checkpoint make_checkpoint(Model& model, const AdamW& opt, std::uint64_t step,
                           const std::map<std::string, std::string>& config);

}  // namespace side
