#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "side/decoder.hpp"
#include "side/encoder.hpp"
#include "side/errors.hpp"
#include "side/rng.hpp"
#include "side/tensor.hpp"

using namespace side;

namespace {

Tensor random_chw(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(std::move(shape), std::move(v));
}

FeaturePyramid random_pyramid(std::size_t c, std::size_t h4, std::size_t w4,
                              Rng& rng) {
  FeaturePyramid p;
  p.f1 = random_chw({c, h4, w4}, rng);
  p.f2 = random_chw({2 * c, h4 / 2, w4 / 2}, rng);
  p.f3 = random_chw({4 * c, h4 / 4, w4 / 4}, rng);
  p.f4 = random_chw({8 * c, h4 / 8, w4 / 8}, rng);
  return p;
}

Tensor find_param(const NamedParams& ps, const std::string& needle) {
  for (const auto& [name, t] : ps) {
    if (name.find(needle) != std::string::npos) return t;
  }
  FAIL("parameter not found: ", needle);
  return Tensor();
}

// Overwrites a projection with the identity map (square weights only).
void make_identity(Tensor w) {
  const std::size_t n = w.extent(0);
  REQUIRE(w.extent(1) == n);
  std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) w.mutable_data()[i * n + i] = 1.0;
}

CsaModule identity_csa(std::size_t c, Rng& rng) {
  CsaModule csa(c, c, c, true, rng);
  NamedParams ps;
  csa.params("csa", ps);
  make_identity(find_param(ps, "fine.weight"));
  make_identity(find_param(ps, "coarse.weight"));
  return csa;
}

}  // namespace

TEST_SUITE("decoder.csa") {
  TEST_CASE("hand-evaluated attention case") {
    Rng rng(1);
    CsaModule csa = identity_csa(2, rng);
    // one fine position [1,0]; coarse positions [1,0] and [0,1]
    Tensor fine = Tensor::from_data({2, 1, 1}, {1, 0});
    Tensor coarse = Tensor::from_data({2, 1, 2}, {1, 0, 0, 1});
    auto r = csa.forward(fine, coarse, false);
    CHECK(r.fused.shape() == Shape{2, 1, 1});
    CHECK(r.fused.data()[0] == doctest::Approx(1.7310585786300048).epsilon(1e-14));
    CHECK(r.fused.data()[1] == doctest::Approx(0.2689414213699951).epsilon(1e-14));
    CHECK(r.projected.data() == std::vector<double>{1, 0});
  }

  TEST_CASE("singleton softmax adds the lone coarse vector exactly") {
    Rng rng(2);
    CsaModule csa = identity_csa(2, rng);
    Tensor fine = Tensor::from_data({2, 1, 1}, {1, 2});
    Tensor coarse = Tensor::from_data({2, 1, 1}, {3, 4});
    auto r = csa.forward(fine, coarse, false);
    CHECK(r.fused.data() == std::vector<double>{4, 6});
  }

  TEST_CASE("identical coarse features dominate any attention pattern") {
    Rng rng(3);
    CsaModule csa(3, 5, 4, true, rng);
    Tensor fine = random_chw({3, 2, 2}, rng);
    // every coarse position carries the same channel vector
    std::vector<double> cv(5 * 6);
    Rng crng(4);
    for (std::size_t c = 0; c < 5; ++c) {
      const double val = crng.uniform(-1.0, 1.0);
      for (std::size_t p = 0; p < 6; ++p) cv[c * 6 + p] = val;
    }
    Tensor coarse = Tensor::from_data({5, 2, 3}, cv);
    auto r = csa.forward(fine, coarse, false);

    // expected: projection + the (identical) projected coarse vector
    NamedParams ps;
    csa.params("csa", ps);
    Tensor k = linear(chw_to_tokens(coarse), find_param(ps, "coarse.weight"),
                      find_param(ps, "coarse.bias"));
    for (std::size_t p = 0; p < 4; ++p) {
      for (std::size_t c = 0; c < 4; ++c) {
        const double expect =
            r.projected.data()[c * 4 + p] + k.data()[c];  // k row 0
        CHECK(r.fused.data()[c * 4 + p] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("attention output is a convex combination of coarse projections") {
    Rng rng(5);
    CsaModule csa(3, 6, 4, true, rng);
    Tensor fine = random_chw({3, 4, 4}, rng);
    Tensor coarse = random_chw({6, 2, 2}, rng);
    auto r = csa.forward(fine, coarse, false);

    NamedParams ps;
    csa.params("csa", ps);
    Tensor k = linear(chw_to_tokens(coarse), find_param(ps, "coarse.weight"),
                      find_param(ps, "coarse.bias"));
    for (std::size_t c = 0; c < 4; ++c) {
      double lo = k.data()[c], hi = k.data()[c];
      for (std::size_t j = 0; j < 4; ++j) {
        lo = std::min(lo, k.data()[j * 4 + c]);
        hi = std::max(hi, k.data()[j * 4 + c]);
      }
      for (std::size_t p = 0; p < 16; ++p) {
        const double mixed =
            r.fused.data()[c * 16 + p] - r.projected.data()[c * 16 + p];
        CHECK(mixed >= lo - 1e-12);
        CHECK(mixed <= hi + 1e-12);
      }
    }
  }

  TEST_CASE("permuting coarse positions leaves the output unchanged") {
    Rng rng(6);
    CsaModule csa(3, 4, 4, true, rng);
    Tensor fine = random_chw({3, 2, 2}, rng);
    Tensor coarse = random_chw({4, 2, 3}, rng);

    // reverse the six coarse positions in every channel plane
    std::vector<double> perm(coarse.data().size());
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t p = 0; p < 6; ++p)
        perm[c * 6 + p] = coarse.data()[c * 6 + (5 - p)];
    Tensor shuffled = Tensor::from_data({4, 2, 3}, perm);

    auto a = csa.forward(fine, coarse, false);
    auto b = csa.forward(fine, shuffled, false);
    for (std::size_t i = 0; i < a.fused.size(); ++i) {
      CHECK(a.fused.data()[i] == doctest::Approx(b.fused.data()[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("temperature flag rescales scores before the softmax") {
    Rng rng(7);
    CsaModule csa = identity_csa(4, rng);
    Tensor fine = random_chw({4, 1, 2}, rng);
    Tensor coarse = random_chw({4, 1, 3}, rng);
    auto off = csa.forward(fine, coarse, false);
    auto on = csa.forward(fine, coarse, true);
    CHECK(off.fused.data() != on.fused.data());

    // reconstruct the tempered path from the identity projections
    Tensor q = chw_to_tokens(fine);
    Tensor k = chw_to_tokens(coarse);
    Tensor att = softmax_rows(mul_scalar(matmul(q, transpose(k)), 0.5));  // 1/√4
    Tensor expect = add(q, matmul(att, k));
    for (std::size_t i = 0; i < expect.size(); ++i) {
      const std::size_t p = i / 4, c = i % 4;
      CHECK(on.fused.data()[c * 2 + p] ==
            doctest::Approx(expect.data()[i]).epsilon(1e-14));
    }
  }

  TEST_CASE("input validation") {
    Rng rng(8);
    CsaModule csa(3, 4, 4, true, rng);
    CHECK_THROWS_AS(
        csa.forward(Tensor::zeros({2, 2, 2}), Tensor::zeros({4, 1, 1}), false),
        ShapeError);
    CHECK_THROWS_AS(
        csa.forward(Tensor::zeros({3, 2, 2}), Tensor::zeros({5, 1, 1}), false),
        ShapeError);
  }
}

TEST_SUITE("decoder.msr") {
  TEST_CASE("zeroed refinement passes constants through") {
    Rng rng(10);
    MsrModule msr(4, rng);
    NamedParams ps;
    msr.params("msr", ps);
    for (auto& [name, t] : ps) {
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
    Tensor coarse = Tensor::full({4, 2, 2}, 1.5);
    auto [features, depth] = msr.forward(coarse, nullptr, 10.0);
    CHECK(features.shape() == Shape{4, 4, 4});
    for (double v : features.data()) CHECK(v == 1.5);
    for (double v : depth.data()) CHECK(v == 5.0);  // max_depth · sigmoid(0)

    Tensor skip = Tensor::full({4, 4, 4}, 2.0);
    auto [f2, d2] = msr.forward(coarse, &skip, 10.0);
    for (double v : f2.data()) CHECK(v == 3.5);
  }

  TEST_CASE("skip shape mismatch is rejected") {
    Rng rng(11);
    MsrModule msr(4, rng);
    Tensor coarse = Tensor::full({4, 2, 2}, 1.0);
    Tensor bad = Tensor::full({4, 3, 4}, 1.0);
    CHECK_THROWS_AS(msr.forward(coarse, &bad, 10.0), ShapeError);
    CHECK_THROWS_AS(msr.forward(Tensor::zeros({3, 2, 2}), nullptr, 10.0),
                    ShapeError);
  }

  TEST_CASE("gradient check through both branches") {
    Rng rng(12);
    MsrModule msr(3, rng);
    Tensor coarse = random_chw({3, 2, 2}, rng);
    Tensor skip = random_chw({3, 4, 4}, rng);
    Tensor coarse_g = Tensor::from_data(coarse.shape(), coarse.data(), true);
    Tensor skip_g = Tensor::from_data(skip.shape(), skip.data(), true);

    auto build_with_skip = [&] {
      auto [f, d] = msr.forward(coarse_g, &skip_g, 10.0);
      return add(sum(mul(f, f)), sum(d));
    };
    std::vector<std::pair<Tensor, std::size_t>> coords;
    for (std::size_t i = 0; i < coarse_g.size(); i += 3) coords.emplace_back(coarse_g, i);
    for (std::size_t i = 0; i < skip_g.size(); i += 11) coords.emplace_back(skip_g, i);
    CHECK(grad_check_coords(build_with_skip, coords) < 1e-4);

    auto build_no_skip = [&] {
      auto [f, d] = msr.forward(coarse_g, nullptr, 10.0);
      return add(sum(mul(f, f)), sum(d));
    };
    std::vector<std::pair<Tensor, std::size_t>> coords2;
    for (std::size_t i = 0; i < coarse_g.size(); i += 3) coords2.emplace_back(coarse_g, i);
    CHECK(grad_check_coords(build_no_skip, coords2) < 1e-4);
  }
}

TEST_SUITE("decoder.decode") {
  TEST_CASE("five depth maps on the exact resolution ladder") {
    EncoderConfig ecfg;
    ecfg.base_channels = 8;
    DecoderConfig dcfg;
    dcfg.max_depth = 10.0;
    Rng rng(13);
    Decoder dec(ecfg, dcfg, rng);
    Rng prng(14);
    FeaturePyramid pyr = random_pyramid(8, 16, 16, prng);  // 64x64 input

    MultiStagePrediction pred = dec.decode(pyr);
    REQUIRE(pred.depths.size() == 5);
    CHECK(pred.depths[0].shape() == Shape{1, 4, 4});
    CHECK(pred.depths[1].shape() == Shape{1, 8, 8});
    CHECK(pred.depths[2].shape() == Shape{1, 16, 16});
    CHECK(pred.depths[3].shape() == Shape{1, 32, 32});
    CHECK(pred.depths[4].shape() == Shape{1, 64, 64});
    CHECK(pred.final_depth().shape() == Shape{1, 64, 64});
  }

  TEST_CASE("depths stay strictly inside (0, max_depth)") {
    EncoderConfig ecfg;
    ecfg.base_channels = 4;
    DecoderConfig dcfg;
    dcfg.max_depth = 7.5;
    Rng rng(15);
    Decoder dec(ecfg, dcfg, rng);
    Rng prng(16);
    MultiStagePrediction pred = dec.decode(random_pyramid(4, 8, 8, prng));
    for (const Tensor& d : pred.depths) {
      for (double v : d.data()) {
        CHECK(v > 0.0);
        CHECK(v < 7.5);
      }
    }
  }

  TEST_CASE("decode gradient check on a parameter slice") {
    EncoderConfig ecfg;
    ecfg.base_channels = 4;
    DecoderConfig dcfg;
    Rng rng(17);
    Decoder dec(ecfg, dcfg, rng);
    Rng prng(18);
    FeaturePyramid pyr = random_pyramid(4, 8, 8, prng);

    NamedParams ps;
    dec.params("d", ps);
    auto build = [&] {
      MultiStagePrediction pred = dec.decode(pyr);
      Tensor loss = sum(pred.depths[0]);
      for (std::size_t i = 1; i < 5; ++i) loss = add(loss, sum(pred.depths[i]));
      return loss;
    };
    std::vector<std::pair<Tensor, std::size_t>> coords = {
        {find_param(ps, "csa1.fine.weight"), 1},
        {find_param(ps, "f4_proj.weight"), 0},
        {find_param(ps, "msr5.head.weight"), 2},
    };
    CHECK(grad_check_coords(build, coords) < 1e-4);
  }

  TEST_CASE("every decoder parameter reaches the loss") {
    EncoderConfig ecfg;
    ecfg.base_channels = 4;
    DecoderConfig dcfg;
    Rng rng(19);
    Decoder dec(ecfg, dcfg, rng);
    Rng prng(20);
    MultiStagePrediction pred = dec.decode(random_pyramid(4, 8, 8, prng));
    Tensor loss = sum(mul(pred.depths[0], pred.depths[0]));
    for (std::size_t i = 1; i < 5; ++i) {
      loss = add(loss, sum(mul(pred.depths[i], pred.depths[i])));
    }
    backward(loss);
    NamedParams ps;
    dec.params("decoder", ps);
    CHECK(ps.size() == 3 * 4 + 2 + 5 * 6);
    for (const auto& [name, t] : ps) {
      INFO(name);
      REQUIRE(t.has_grad());
      bool any = false;
      for (double g : t.grad()) any = any || g != 0.0;
      CHECK(any);
    }
  }

  TEST_CASE("ablation: attention off reduces fusion to the fine projection") {
    EncoderConfig ecfg;
    ecfg.base_channels = 4;
    DecoderConfig dcfg;
    dcfg.use_csa = false;
    Rng rng(21);
    Decoder dec(ecfg, dcfg, rng);
    Rng prng(22);
    DecodeTrace trace;
    dec.decode(random_pyramid(4, 8, 8, prng), &trace);
    REQUIRE(trace.fused.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(trace.fused[k].data() == trace.projected[k].data());
    }
  }

  TEST_CASE("ablation: refinement off still emits the full ladder") {
    EncoderConfig ecfg;
    ecfg.base_channels = 4;
    DecoderConfig dcfg;
    dcfg.use_msr = false;
    dcfg.max_depth = 10.0;
    Rng rng(23);
    Decoder dec(ecfg, dcfg, rng);
    Rng prng(24);
    MultiStagePrediction pred = dec.decode(random_pyramid(4, 16, 16, prng));
    REQUIRE(pred.depths.size() == 5);
    CHECK(pred.depths[0].shape() == Shape{1, 4, 4});
    CHECK(pred.depths[4].shape() == Shape{1, 64, 64});
    // the two finest maps are interpolations of the H/4 prediction
    CHECK(pred.depths[3].data() == bilinear_upsample(pred.depths[2], 2).data());
    CHECK(pred.depths[4].data() == bilinear_upsample(pred.depths[2], 4).data());
    for (const Tensor& d : pred.depths) {
      for (double v : d.data()) {
        CHECK(v > 0.0);
        CHECK(v < 10.0);
      }
    }
  }
}

TEST_SUITE("decoder.receptive_field") {
  TEST_CASE("self, orthogonal and identical similarities") {
    // two orthogonal channel vectors: (1,0) at position 0, (0,1) at position 1
    Tensor f = Tensor::from_data({2, 1, 2}, {1, 0, 0, 1});
    auto [before, after] = receptive_field_map(f, f, 0, 0);
    CHECK(before.shape() == Shape{1, 2});
    CHECK(before.data()[0] == 1.0);  // exactly one at the reference
    CHECK(before.data()[1] == 0.5);  // orthogonal maps to the midpoint
    CHECK(after.data() == before.data());

    Tensor uniform = Tensor::full({3, 2, 2}, 0.7);
    auto [b2, a2] = receptive_field_map(uniform, uniform, 1, 1);
    for (double v : b2.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("degenerate reference is rejected") {
    Tensor f = Tensor::from_data({2, 1, 2}, {0, 1, 0, 1});
    CHECK_THROWS_AS(receptive_field_map(f, f, 0, 0), DomainError);
    CHECK_THROWS_AS(receptive_field_map(f, f, 0, 5), ShapeError);
  }

  TEST_CASE("opposite vectors map to zero") {
    Tensor f = Tensor::from_data({2, 1, 2}, {1, -1, 1, -1});
    auto [before, after] = receptive_field_map(f, f, 0, 0);
    CHECK(before.data()[1] == doctest::Approx(0.0).epsilon(1e-12));
  }
}
