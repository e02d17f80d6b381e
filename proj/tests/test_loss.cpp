#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "side/errors.hpp"
#include "side/loss.hpp"
#include "side/rng.hpp"
#include "side/tensor.hpp"

using namespace side;

namespace {

Tensor map_of(std::size_t h, std::size_t w, std::vector<double> v) {
  return Tensor::from_data({1, h, w}, std::move(v));
}

Tensor random_depth(std::size_t h, std::size_t w, Rng& rng, bool rg = false) {
  std::vector<double> v(h * w);
  for (double& x : v) x = rng.uniform(0.5, 8.0);
  return Tensor::from_data({1, h, w}, std::move(v), rg);
}

}  // namespace

TEST_SUITE("loss.silog") {
  TEST_CASE("perfect fit sits on the smoothing floor") {
    Tensor gt = map_of(2, 2, {1, 2, 3, 4});
    Tensor mask = Tensor::full({1, 2, 2}, 1.0);
    Tensor loss = silog_sqrt_loss(gt, gt, mask, 0.85);
    CHECK(loss.item() == std::sqrt(1e-12));
    CHECK(loss.item() <= 1e-6);
  }

  TEST_CASE("single pixel, prediction e times truth") {
    const double e = std::exp(1.0);
    Tensor pred = map_of(1, 1, {2.0 * e});
    Tensor gt = map_of(1, 1, {2.0});
    Tensor mask = Tensor::full({1, 1, 1}, 1.0);
    // d = 1, n = 1: sqrt(1 − 0.85) = sqrt(0.15)
    CHECK(silog_sqrt_loss(pred, gt, mask, 0.85).item() ==
          doctest::Approx(0.3872983346207417).epsilon(1e-10));
  }

  TEST_CASE("opposite log errors cancel in the variance term") {
    const double e = std::exp(1.0);
    Tensor pred = map_of(1, 2, {3.0 * e, 5.0 / e});  // d = (+1, −1)
    Tensor gt = map_of(1, 2, {3.0, 5.0});
    Tensor mask = Tensor::full({1, 1, 2}, 1.0);
    CHECK(silog_sqrt_loss(pred, gt, mask, 0.85).item() ==
          doctest::Approx(1.0).epsilon(1e-10));
  }

  TEST_CASE("two-pixel frozen value") {
    Tensor pred = map_of(1, 2, {2, 4});
    Tensor gt = map_of(1, 2, {1, 1});
    Tensor mask = Tensor::full({1, 1, 2}, 1.0);
    CHECK(silog_sqrt_loss(pred, gt, mask, 0.85).item() ==
          doctest::Approx(0.5312872534495284).epsilon(1e-14));
  }

  TEST_CASE("lambda=1 removes global scale exactly") {
    Rng rng(41);
    Tensor pred = random_depth(3, 4, rng);
    Tensor gt = random_depth(3, 4, rng);
    Tensor mask = Tensor::full({1, 3, 4}, 1.0);
    const double base = silog_sqrt_loss(pred, gt, mask, 1.0).item();
    for (double c : {0.5, 3.0, 17.0}) {
      Tensor scaled = mul_scalar(pred, c);
      CHECK(silog_sqrt_loss(scaled, gt, mask, 1.0).item() ==
            doctest::Approx(base).epsilon(1e-12));
    }
    // at lambda = 0.85 the same rescale moves the loss
    const double l085 = silog_sqrt_loss(pred, gt, mask, 0.85).item();
    const double l085_scaled =
        silog_sqrt_loss(mul_scalar(pred, 3.0), gt, mask, 0.85).item();
    CHECK(std::fabs(l085 - l085_scaled) > 1e-6);
  }

  TEST_CASE("non-negative and permutation invariant") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor pred = random_depth(2, 3, rng);
      Tensor gt = random_depth(2, 3, rng);
      std::vector<double> mv(6, 0.0);
      for (std::size_t i = 0; i < 6; ++i) mv[i] = rng.bernoulli(0.7) ? 1.0 : 0.0;
      mv[0] = 1.0;  // keep at least one valid pixel
      Tensor mask = map_of(2, 3, mv);
      const double loss = silog_sqrt_loss(pred, gt, mask, 0.85).item();
      CHECK(loss >= 0.0);

      // reverse pixel order everywhere
      auto rev = [](const Tensor& t) {
        std::vector<double> v(t.data().rbegin(), t.data().rend());
        return Tensor::from_data(t.shape(), std::move(v));
      };
      CHECK(silog_sqrt_loss(rev(pred), rev(gt), rev(mask), 0.85).item() ==
            doctest::Approx(loss).epsilon(1e-12));
    }
  }

  TEST_CASE("gradient flows only into valid pixels") {
    Rng rng(43);
    Tensor pred = random_depth(2, 2, rng, true);
    Tensor gt = random_depth(2, 2, rng);
    Tensor mask = map_of(2, 2, {1, 0, 0, 1});
    backward(silog_sqrt_loss(pred, gt, mask, 0.85));
    CHECK(pred.grad()[1] == 0.0);
    CHECK(pred.grad()[2] == 0.0);
    CHECK(pred.grad()[0] != 0.0);
    CHECK(pred.grad()[3] != 0.0);
  }

  TEST_CASE("gradient check") {
    Rng rng(44);
    Tensor gt = random_depth(2, 3, rng);
    Tensor mask = map_of(2, 3, {1, 1, 0, 1, 1, 1});
    Tensor pred = random_depth(2, 3, rng, true);
    auto f = [&](const Tensor& t) { return silog_sqrt_loss(t, gt, mask, 0.85); };
    CHECK(grad_check(f, pred) < 1e-6);
  }

  TEST_CASE("input validation") {
    Tensor good = map_of(1, 2, {1, 2});
    Tensor ones = Tensor::full({1, 1, 2}, 1.0);
    CHECK_THROWS_AS(silog_sqrt_loss(good, good, Tensor::zeros({1, 1, 2}), 0.85),
                    DataError);
    CHECK_THROWS_AS(
        silog_sqrt_loss(good, map_of(1, 2, {1, -2}), ones, 0.85), DomainError);
    CHECK_THROWS_AS(
        silog_sqrt_loss(map_of(1, 2, {1, 0}), good, ones, 0.85), DomainError);
    CHECK_THROWS_AS(
        silog_sqrt_loss(good, good, map_of(1, 2, {1, 0.25}), 0.85), DomainError);
    CHECK_THROWS_AS(silog_sqrt_loss(good, Tensor::full({1, 2, 1}, 1.0), ones, 0.85),
                    ShapeError);
  }
}

TEST_SUITE("loss.downsample") {
  TEST_CASE("constant fully valid field") {
    Tensor gt = Tensor::full({1, 4, 4}, 2.5);
    Tensor mask = Tensor::full({1, 4, 4}, 1.0);
    auto [g, m] = downsample_gt(gt, mask, 2, 2);
    CHECK(g.shape() == Shape{1, 2, 2});
    for (double v : g.data()) CHECK(v == 2.5);
    for (double v : m.data()) CHECK(v == 1.0);
  }

  TEST_CASE("partially valid block takes the valid mean") {
    Tensor gt = map_of(2, 2, {2, 4, 9, 9});
    Tensor mask = map_of(2, 2, {1, 1, 0, 0});
    auto [g, m] = downsample_gt(gt, mask, 1, 1);
    CHECK(g.item() == 3.0);
    CHECK(m.item() == 1.0);
  }

  TEST_CASE("fully invalid block gets the placeholder") {
    Tensor gt = map_of(2, 2, {7, 7, 7, 7});
    Tensor mask = Tensor::zeros({1, 2, 2});
    auto [g, m] = downsample_gt(gt, mask, 1, 1);
    CHECK(g.item() == 1.0);
    CHECK(m.item() == 0.0);
  }

  TEST_CASE("mixed blocks") {
    // left block valid mean (1+3)/2, right block invalid
    Tensor gt = map_of(2, 4, {1, 5, 9, 9, 3, 5, 9, 9});
    Tensor mask = map_of(2, 4, {1, 0, 0, 0, 1, 0, 0, 0});
    auto [g, m] = downsample_gt(gt, mask, 1, 2);
    CHECK(g.data() == std::vector<double>{2, 1});
    CHECK(m.data() == std::vector<double>{1, 0});
  }

  TEST_CASE("non-integer ratios are rejected") {
    Tensor gt = Tensor::full({1, 4, 6}, 1.0);
    Tensor mask = Tensor::full({1, 4, 6}, 1.0);
    CHECK_THROWS_AS(downsample_gt(gt, mask, 3, 3), ShapeError);
    CHECK_THROWS_AS(downsample_gt(gt, mask, 0, 2), ShapeError);
  }
}

TEST_SUITE("loss.mss") {
  namespace {
  MultiStagePrediction ladder(std::size_t h, std::size_t w, Rng& rng) {
    MultiStagePrediction p;
    for (std::size_t f = 16; f >= 1; f /= 2) {
      std::vector<double> v((h / f) * (w / f));
      for (double& x : v) x = rng.uniform(0.5, 8.0);
      p.depths.push_back(Tensor::from_data({1, h / f, w / f}, std::move(v)));
    }
    return p;
  }
  }  // namespace

  TEST_CASE("final-only weights reproduce the final-stage loss bitwise") {
    Rng rng(50);
    MultiStagePrediction preds = ladder(16, 16, rng);
    Tensor gt = random_depth(16, 16, rng);
    Tensor mask = Tensor::full({1, 16, 16}, 1.0);
    LossConfig cfg;
    cfg.stage_weights = {0, 0, 0, 0, 1};
    Tensor total = mss_loss(preds, gt, mask, cfg);
    Tensor final_only = silog_sqrt_loss(preds.depths[4], gt, mask, cfg.lambda);
    CHECK(total.item() == final_only.item());
  }

  TEST_CASE("two active stages sum their independent losses") {
    Rng rng(51);
    MultiStagePrediction preds = ladder(16, 16, rng);
    Tensor gt = random_depth(16, 16, rng);
    Tensor mask = Tensor::full({1, 16, 16}, 1.0);
    LossConfig cfg;
    cfg.stage_weights = {1, 0, 0, 0, 1};
    auto [g0, m0] = downsample_gt(gt, mask, 1, 1);
    const double a = silog_sqrt_loss(preds.depths[0], g0, m0, cfg.lambda).item();
    const double b = silog_sqrt_loss(preds.depths[4], gt, mask, cfg.lambda).item();
    CHECK(mss_loss(preds, gt, mask, cfg).item() ==
          doctest::Approx(a + b).epsilon(1e-12));
  }

  TEST_CASE("constant scene with perfect predictions is near zero") {
    MultiStagePrediction p;
    for (std::size_t f = 16; f >= 1; f /= 2) {
      p.depths.push_back(Tensor::full({1, 16 / f, 16 / f}, 4.0));
    }
    Tensor gt = Tensor::full({1, 16, 16}, 4.0);
    Tensor mask = Tensor::full({1, 16, 16}, 1.0);
    CHECK(mss_loss(p, gt, mask, LossConfig{}).item() <= 5 * 1e-6);
  }

  TEST_CASE("linear in stage weights") {
    Rng rng(52);
    MultiStagePrediction preds = ladder(16, 16, rng);
    Tensor gt = random_depth(16, 16, rng);
    Tensor mask = Tensor::full({1, 16, 16}, 1.0);
    LossConfig one, two;
    one.stage_weights = {0, 0, 1, 0, 0};
    two.stage_weights = {0, 0, 2, 0, 0};
    CHECK(mss_loss(preds, gt, mask, two).item() ==
          doctest::Approx(2.0 * mss_loss(preds, gt, mask, one).item())
              .epsilon(1e-15));
  }

  TEST_CASE("empty mask at every scale is fatal") {
    Rng rng(53);
    MultiStagePrediction preds = ladder(16, 16, rng);
    Tensor gt = random_depth(16, 16, rng);
    Tensor mask = Tensor::zeros({1, 16, 16});
    std::vector<std::size_t> skipped;
    CHECK_THROWS_AS(mss_loss(preds, gt, mask, LossConfig{}, &skipped), DataError);
    CHECK(skipped.size() == 5);  // every scale was visited and skipped
  }

  TEST_CASE("config validation") {
    LossConfig bad;
    bad.lambda = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.lambda = 0.85;
    bad.stage_weights = {0, 0, 0, 0, 0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.stage_weights = {1, 1, 1, 1, -1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.stage_weights = {1, 1, 1, 1, 1};
    bad.min_valid_depth = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}
