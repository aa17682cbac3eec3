// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "gde/backbone.hpp"
#include "gde/bench.hpp"
#include "gde/errors.hpp"
#include "support.hpp"

using namespace gde;

namespace {

RawImage constant_image(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RawImage img{w, h, {}};
  for (std::size_t i = 0; i < w * h; ++i) img.rgb.insert(img.rgb.end(), {r, g, b});
  return img;
}

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("square input at the target size") {
    const Image img = preprocess_image(random_image(640, 1), 640);
    CHECK(img.pixels.shape() == Shape{3, 640, 640});
    CHECK(img.scale == 1.0);
    CHECK(img.content_width == 640);
  }

  TEST_CASE("pixels equal to the channel means normalize to zero") {
    Tensor unit({3, 4, 4});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 16; ++i) unit[c * 16 + i] = kPixelMean[c];
    const Tensor out = normalize_pixels(unit);
    for (float v : out.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("landscape input is resized on the long side and zero padded") {
    const Image img = preprocess_image(constant_image(500, 300, 200, 100, 50), 640);
    CHECK(img.pixels.shape() == Shape{3, 640, 640});
    CHECK(img.content_width == 640);
    CHECK(img.content_height == 384);
    CHECK(img.scale == doctest::Approx(1.28));
    const float expected_r = (200.0f / 255.0f - kPixelMean[0]) / kPixelStd[0];
    CHECK(img.pixels(0, 100, 100) == doctest::Approx(expected_r).epsilon(1e-5));
    CHECK(img.pixels(0, 383, 639) == doctest::Approx(expected_r).epsilon(1e-5));
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(img.pixels(c, 384, 0) == 0.0f);
      CHECK(img.pixels(c, 639, 639) == 0.0f);
    }
  }

  TEST_CASE("invalid inputs") {
    CHECK_THROWS_AS(preprocess_image(RawImage{}, 640), ValidationError);
    CHECK_THROWS_AS(preprocess_image(random_image(64, 1), 100), ValidationError);
  }
}

TEST_SUITE("pyramid") {
  TEST_CASE("level shapes follow the strides") {
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 1);
    for (std::size_t size : {64, 256, 640}) {
      CAPTURE(size);
      const FeaturePyramid p = extract_pyramid(Tensor({3, size, size}, 0.1f), ws, cfg);
      CHECK(p.p3.shape() == Shape{cfg.d_model, size / 8, size / 8});
      CHECK(p.p4.shape() == Shape{cfg.d_model, size / 16, size / 16});
      CHECK(p.p5.shape() == Shape{cfg.d_model, size / 32, size / 32});
    }
  }

  TEST_CASE("non-square inputs") {
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 1);
    const FeaturePyramid p = extract_pyramid(Tensor({3, 64, 96}, 0.1f), ws, cfg);
    CHECK(p.p5.shape() == Shape{cfg.d_model, 2, 3});
  }

  TEST_CASE("dimensions must be multiples of 32") {
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 1);
    CHECK_THROWS_AS(extract_pyramid(Tensor({3, 48, 64}), ws, cfg), ValidationError);
  }

  TEST_CASE("deterministic for a fixed seed and image") {
    const ModelConfig cfg = test::small_config();
    const Image img = preprocess_image(random_image(64, 9), 64);
    const FeaturePyramid a = extract_pyramid(img, init_weights(cfg, 5), cfg);
    const FeaturePyramid b = extract_pyramid(img, init_weights(cfg, 5), cfg);
    CHECK(a == b);
    CHECK(test::all_finite(a.p3));
  }
}
