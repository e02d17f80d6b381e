#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "side/rng.hpp"
#include "side/tensor.hpp"

namespace side {

// One training/eval example: RGB in [0,1], metric depth, and a {0,1} mask
// marking pixels with usable ground truth.
struct DepthSample {
  Tensor image;  // 3xHxW
  Tensor depth;  // 1xHxW, > 0 where mask == 1
  Tensor mask;   // 1xHxW, values in {0, 1}

  std::size_t height() const { return image.extent(1); }
  std::size_t width() const { return image.extent(2); }
  void validate() const;
};

// Every generated depth lies in (0, 0.9 * kSceneMaxDepth]; keep model
// max_depth at or above this so the sigmoid head can reach all targets.
inline constexpr double kSceneMaxDepth = 10.0;

// Deterministic synthetic scene: 3-8 axis-aligned rectangles at random
// depths over a tilted background plane. Appearance encodes geometry (green
// and blue channels are functions of depth, red is a per-object albedo), so
// depth is learnable from the image alone. Exactly 10% of pixels are marked
// invalid to mimic sparse ground truth.
DepthSample generate_scene(std::uint64_t seed, std::size_t h, std::size_t w);

struct AugmentConfig {
  std::size_t crop_h = 0;      // required: output extent
  std::size_t crop_w = 0;
  double rotate_deg = 1.0;     // rotation drawn from [-rotate_deg, +rotate_deg]
  double scale_lo = 0.9;       // zoom factor range; depth divides by the draw
  double scale_hi = 1.1;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;      // stream id used by callers to derive draws

  void validate() const;
};

// Applies scale -> rotate -> crop -> horizontal flip, consuming randomness
// from `rng`. Depth and mask resample nearest-neighbor; the image resamples
// bilinearly. Pixels with no source (rotation corners) become mask == 0.
DepthSample augment(const DepthSample& s, const AugmentConfig& cfg, Rng& rng);

// Dataset directory layout: NNNN.ppm / NNNN.pfm / NNNN_mask.pgm plus
// manifest.txt listing one sample id per line.
std::string sample_id(std::size_t index);
void save_sample(const std::string& dir, const std::string& id, const DepthSample& s);
DepthSample load_sample(const std::string& dir, const std::string& id);
void write_manifest(const std::string& dir, const std::vector<std::string>& ids);
std::vector<std::string> read_manifest(const std::string& dir);
std::vector<DepthSample> load_dataset(const std::string& dir);

}  // namespace side
