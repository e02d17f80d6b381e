#include "side/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <utility>

#include "side/errors.hpp"
#include "side/image_io.hpp"

namespace side {

void DepthSample::validate() const {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw ShapeError("sample: image must be 3xHxW, got " + shape_str(image.shape()));
  }
  const Shape plane{1, height(), width()};
  if (depth.shape() != plane || mask.shape() != plane) {
    throw ShapeError("sample: depth " + shape_str(depth.shape()) + " and mask " +
                     shape_str(mask.shape()) + " must both be " + shape_str(plane));
  }
  const std::vector<double>& m = mask.data();
  const std::vector<double>& d = depth.data();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0 && m[i] != 1.0) {
      throw DomainError("sample: mask must be 0/1, found " + std::to_string(m[i]));
    }
    if (m[i] == 1.0 && !(d[i] > 0.0)) {
      throw DomainError("sample: non-positive depth " + std::to_string(d[i]) +
                        " at valid pixel " + std::to_string(i));
    }
  }
}

DepthSample generate_scene(std::uint64_t seed, std::size_t h, std::size_t w) {
  if (h % 32 != 0 || w % 32 != 0) {
    throw ConfigError("scene: extent " + std::to_string(h) + "x" + std::to_string(w) +
                      " must be divisible by 32");
  }
  Rng rng(seed);

  // Tilted background plane, depths within [2, 8].
  const double d0 = rng.uniform(4.0, 6.0);
  const double slope_r = rng.uniform(-1.0, 1.0);
  const double slope_c = rng.uniform(-1.0, 1.0);
  const double bg_albedo = rng.uniform(0.2, 0.9);
  std::vector<double> depth(h * w);
  std::vector<double> albedo(h * w, bg_albedo);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      depth[r * w + c] = d0 + slope_r * (static_cast<double>(r) / static_cast<double>(h - 1)) +
                         slope_c * (static_cast<double>(c) / static_cast<double>(w - 1));
    }
  }

  // Foreground rectangles; later ones overwrite (occlude) earlier ones.
  const std::size_t n_rect = 3 + rng.below(6);
  for (std::size_t k = 0; k < n_rect; ++k) {
    const std::size_t rh = 4 + rng.below(h / 2 - 3);
    const std::size_t rw = 4 + rng.below(w / 2 - 3);
    const std::size_t r0 = rng.below(h - rh + 1);
    const std::size_t c0 = rng.below(w - rw + 1);
    const double rect_depth = rng.uniform(1.0, 0.9 * kSceneMaxDepth);
    const double rect_albedo = rng.uniform(0.1, 1.0);
    for (std::size_t r = r0; r < r0 + rh; ++r) {
      for (std::size_t c = c0; c < c0 + rw; ++c) {
        depth[r * w + c] = rect_depth;
        albedo[r * w + c] = rect_albedo;
      }
    }
  }

  // Appearance encodes geometry: G rises with depth, B falls with it, R is
  // the per-object albedo. A network can read depth straight off the colors.
  std::vector<double> image(3 * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double g = depth[i] / kSceneMaxDepth;
    image[0 * h * w + i] = albedo[i];
    image[1 * h * w + i] = g;
    image[2 * h * w + i] = 1.0 - g;
  }

  // Exactly 10% of pixels lose their ground truth (partial Fisher-Yates).
  std::vector<double> mask(h * w, 1.0);
  const std::size_t n_invalid = (h * w) / 10;
  std::vector<std::size_t> order(h * w);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < n_invalid; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
    mask[order[i]] = 0.0;
  }

  DepthSample s{Tensor::from_data({3, h, w}, std::move(image)),
                Tensor::from_data({1, h, w}, std::move(depth)),
                Tensor::from_data({1, h, w}, std::move(mask))};
  s.validate();
  return s;
}

void AugmentConfig::validate() const {
  if (crop_h == 0 || crop_w == 0) {
    throw ConfigError("augment: crop extent must be positive");
  }
  if (!(scale_lo > 0.0) || scale_lo > scale_hi) {
    throw ConfigError("augment: scale range [" + std::to_string(scale_lo) + ", " +
                      std::to_string(scale_hi) + "] must satisfy 0 < lo <= hi");
  }
  if (rotate_deg < 0.0) throw ConfigError("augment: rotate_deg must be >= 0");
  if (flip_prob < 0.0 || flip_prob > 1.0) {
    throw ConfigError("augment: flip_prob must lie in [0, 1]");
  }
}

namespace {

double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Half-pixel-convention bilinear sample with clamped taps.
double sample_bilinear(const double* p, std::size_t h, std::size_t w,
                       double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const auto at = [&](double r, double c) {
    const std::size_t ri = static_cast<std::size_t>(clampd(r, 0.0, static_cast<double>(h - 1)));
    const std::size_t ci = static_cast<std::size_t>(clampd(c, 0.0, static_cast<double>(w - 1)));
    return p[ri * w + ci];
  };
  const double top = at(fy, fx) + tx * (at(fy, fx + 1) - at(fy, fx));
  const double bot = at(fy + 1, fx) + tx * (at(fy + 1, fx + 1) - at(fy + 1, fx));
  return top + ty * (bot - top);
}

struct PlaneSet {
  std::vector<double> image;  // 3 channel planes
  std::vector<double> depth;
  std::vector<double> mask;
  std::size_t h = 0, w = 0;
};

PlaneSet rescale(const PlaneSet& in, double factor) {
  PlaneSet out;
  out.h = static_cast<std::size_t>(std::max<long long>(1, std::llround(static_cast<double>(in.h) * factor)));
  out.w = static_cast<std::size_t>(std::max<long long>(1, std::llround(static_cast<double>(in.w) * factor)));
  out.image.resize(3 * out.h * out.w);
  out.depth.resize(out.h * out.w);
  out.mask.resize(out.h * out.w);
  const double ry = static_cast<double>(in.h) / static_cast<double>(out.h);
  const double rx = static_cast<double>(in.w) / static_cast<double>(out.w);
  for (std::size_t r = 0; r < out.h; ++r) {
    const double sy = (static_cast<double>(r) + 0.5) * ry - 0.5;
    const long long ny = std::llround(clampd(sy, 0.0, static_cast<double>(in.h - 1)));
    for (std::size_t c = 0; c < out.w; ++c) {
      const double sx = (static_cast<double>(c) + 0.5) * rx - 0.5;
      const long long nx = std::llround(clampd(sx, 0.0, static_cast<double>(in.w - 1)));
      const std::size_t src = static_cast<std::size_t>(ny) * in.w + static_cast<std::size_t>(nx);
      const std::size_t dst = r * out.w + c;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.image[ch * out.h * out.w + dst] =
            sample_bilinear(in.image.data() + ch * in.h * in.w, in.h, in.w, sy, sx);
      }
      out.depth[dst] = in.depth[src] / factor;
      out.mask[dst] = in.mask[src];
    }
  }
  return out;
}

PlaneSet rotate(const PlaneSet& in, double degrees) {
  PlaneSet out;
  out.h = in.h;
  out.w = in.w;
  out.image.resize(3 * out.h * out.w);
  out.depth.resize(out.h * out.w);
  out.mask.resize(out.h * out.w);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cy = static_cast<double>(in.h) / 2.0;
  const double cx = static_cast<double>(in.w) / 2.0;
  for (std::size_t r = 0; r < out.h; ++r) {
    for (std::size_t c = 0; c < out.w; ++c) {
      const double yr = (static_cast<double>(r) + 0.5) - cy;
      const double xc = (static_cast<double>(c) + 0.5) - cx;
      // inverse rotation: sample the source at R(-theta) * offset
      const double sy = cy + (-sin_t * xc + cos_t * yr) - 0.5;
      const double sx = cx + (cos_t * xc + sin_t * yr) - 0.5;
      const std::size_t dst = r * out.w + c;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.image[ch * out.h * out.w + dst] =
            sample_bilinear(in.image.data() + ch * in.h * in.w, in.h, in.w, sy, sx);
      }
      const long long ny = std::llround(sy), nx = std::llround(sx);
      if (ny < 0 || nx < 0 || ny >= static_cast<long long>(in.h) ||
          nx >= static_cast<long long>(in.w)) {
        out.depth[dst] = 1.0;  // placeholder; never read behind mask == 0
        out.mask[dst] = 0.0;
      } else {
        const std::size_t src = static_cast<std::size_t>(ny) * in.w + static_cast<std::size_t>(nx);
        out.depth[dst] = in.depth[src];
        out.mask[dst] = in.mask[src];
      }
    }
  }
  return out;
}

PlaneSet crop(const PlaneSet& in, std::size_t r0, std::size_t c0, std::size_t ch_, std::size_t cw) {
  PlaneSet out;
  out.h = ch_;
  out.w = cw;
  out.image.resize(3 * ch_ * cw);
  out.depth.resize(ch_ * cw);
  out.mask.resize(ch_ * cw);
  for (std::size_t r = 0; r < ch_; ++r) {
    for (std::size_t c = 0; c < cw; ++c) {
      const std::size_t src = (r0 + r) * in.w + (c0 + c);
      const std::size_t dst = r * cw + c;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.image[ch * ch_ * cw + dst] = in.image[ch * in.h * in.w + src];
      }
      out.depth[dst] = in.depth[src];
      out.mask[dst] = in.mask[src];
    }
  }
  return out;
}

void flip_horizontal(PlaneSet& p) {
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double* plane = p.image.data() + ch * p.h * p.w;
    for (std::size_t r = 0; r < p.h; ++r) {
      std::reverse(plane + r * p.w, plane + (r + 1) * p.w);
    }
  }
  for (std::size_t r = 0; r < p.h; ++r) {
    std::reverse(p.depth.begin() + static_cast<std::ptrdiff_t>(r * p.w),
                 p.depth.begin() + static_cast<std::ptrdiff_t>((r + 1) * p.w));
    std::reverse(p.mask.begin() + static_cast<std::ptrdiff_t>(r * p.w),
                 p.mask.begin() + static_cast<std::ptrdiff_t>((r + 1) * p.w));
  }
}

}  // namespace

DepthSample augment(const DepthSample& s, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  PlaneSet p{s.image.data(), s.depth.data(), s.mask.data(), s.height(), s.width()};

  const double factor = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  p = rescale(p, factor);

  const double degrees = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
  p = rotate(p, degrees);

  if (cfg.crop_h > p.h || cfg.crop_w > p.w) {
    throw ConfigError("augment: crop " + std::to_string(cfg.crop_h) + "x" +
                      std::to_string(cfg.crop_w) + " exceeds post-scale extent " +
                      std::to_string(p.h) + "x" + std::to_string(p.w));
  }
  const std::size_t r0 = rng.below(p.h - cfg.crop_h + 1);
  const std::size_t c0 = rng.below(p.w - cfg.crop_w + 1);
  p = crop(p, r0, c0, cfg.crop_h, cfg.crop_w);

  if (rng.bernoulli(cfg.flip_prob)) flip_horizontal(p);

  return DepthSample{Tensor::from_data({3, p.h, p.w}, std::move(p.image)),
                     Tensor::from_data({1, p.h, p.w}, std::move(p.depth)),
                     Tensor::from_data({1, p.h, p.w}, std::move(p.mask))};
}

std::string sample_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", index);
  return buf;
}

void save_sample(const std::string& dir, const std::string& id, const DepthSample& s) {
  write_ppm(dir + "/" + id + ".ppm", s.image);
  write_pfm(dir + "/" + id + ".pfm", s.depth);
  write_pgm(dir + "/" + id + "_mask.pgm", s.mask);
}

DepthSample load_sample(const std::string& dir, const std::string& id) {
  DepthSample s{read_ppm(dir + "/" + id + ".ppm"), read_pfm(dir + "/" + id + ".pfm"),
                read_pgm(dir + "/" + id + "_mask.pgm")};
  // PGM grays other than 0/255 are not a valid mask encoding.
  for (double v : s.mask.data()) {
    if (v != 0.0 && v != 1.0) {
      throw DataError("dataset: " + id + "_mask.pgm holds gray values, not a 0/255 mask");
    }
  }
  s.validate();
  return s;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& ids) {
  const std::string path = dir + "/manifest.txt";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("dataset: cannot open " + path + " for writing");
  for (const std::string& id : ids) out << id << "\n";
  if (!out) throw DataError("dataset: write failed for " + path);
}

std::vector<std::string> read_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.txt";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (ids.empty()) throw DataError("dataset: " + path + " lists no samples");
  return ids;
}

std::vector<DepthSample> load_dataset(const std::string& dir) {
  std::vector<DepthSample> samples;
  for (const std::string& id : read_manifest(dir)) {
    samples.push_back(load_sample(dir, id));
  }
  return samples;
}

}  // namespace side
