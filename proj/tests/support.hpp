// SPDX-License-Identifier: Apache-2.0
// Shared fixtures and independent reference implementations for tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gde/config.hpp"
#include "gde/tensor.hpp"
#include "gde/text.hpp"
#include "gde/weights.hpp"

namespace gde::test {

/// Small model that runs in milliseconds; 64x64 input gives 64+16+4 tokens.
inline ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.image_size = 64;
  cfg.backbone_channels = {8, 16, 16, 32};
  cfg.text.layers = 1;
  cfg.text.ffn_dim = 64;
  cfg.enhancer.layers = 2;
  cfg.enhancer.ffn_dim = 64;
  cfg.enhancer.fusion_hidden = 8;
  cfg.head.num_queries = 20;
  cfg.head.decoder_layers = 2;
  cfg.head.ffn_dim = 64;
  return cfg;
}

template <typename T = float>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
BasicTensor<T> identity(std::size_t n) {
  BasicTensor<T> t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = T{1};
  return t;
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

/// Triple loop, t ascending.
template <typename T>
BasicTensor<T> naive_matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t t = 0; t < k; ++t) s += a(i, t) * b(t, j);
      c(i, j) = s;
    }
  return c;
}

/// Direct convolution with zero padding, accumulated in double.
inline TensorD naive_conv(const TensorD& x, const TensorD& w, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  TensorD y({co, ho, wo});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const auto yy = static_cast<std::ptrdiff_t>(i * stride + a) - static_cast<std::ptrdiff_t>(pad);
              const auto xx = static_cast<std::ptrdiff_t>(j * stride + b) - static_cast<std::ptrdiff_t>(pad);
              if (yy < 0 || xx < 0 || yy >= std::ptrdiff_t(h) || xx >= std::ptrdiff_t(wd)) continue;
              s += x(c, std::size_t(yy), std::size_t(xx)) * w[((o * ci + c) * kh + a) * kw + b];
            }
        y(o, i, j) = s;
      }
  return y;
}

/// Bilinear lookup on a [c, H, W] map, align-corners-false, zero outside.
inline double naive_bilinear(const TensorD& map, std::size_t c, double x, double y) {
  const double px = x * double(map.dim(2)) - 0.5, py = y * double(map.dim(1)) - 0.5;
  const double fx = std::floor(px), fy = std::floor(py);
  double s = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const double cx = fx + dx, cy = fy + dy;
      if (cx < 0 || cy < 0 || cx >= double(map.dim(2)) || cy >= double(map.dim(1))) continue;
      const double w = (dx ? px - fx : 1 - (px - fx)) * (dy ? py - fy : 1 - (py - fy));
      s += w * map(c, std::size_t(cy), std::size_t(cx));
    }
  return s;
}

/// Exhaustive minimum over injective assignments of the smaller side,
/// summed in query order.
inline double brute_force_assignment_cost(const TensorD& cost) {
  const std::size_t k = cost.dim(0), g = cost.dim(1);
  const bool rows_small = k <= g;
  const std::size_t small = rows_small ? k : g, large = rows_small ? g : k;
  std::vector<std::size_t> perm(large);
  for (std::size_t i = 0; i < large; ++i) perm[i] = i;
  double best = INFINITY;
  do {
    std::vector<double> by_query(k, 0.0);
    std::vector<char> used(k, 0);
    for (std::size_t i = 0; i < small; ++i) {
      const std::size_t q = rows_small ? i : perm[i];
      const std::size_t t = rows_small ? perm[i] : i;
      by_query[q] = cost(q, t);
      used[q] = 1;
    }
    double s = 0;
    for (std::size_t q = 0; q < k; ++q)
      if (used[q]) s += by_query[q];
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline Prompt prompt_of(std::vector<std::string> phrases) { return assemble_prompt(phrases); }

}  // namespace gde::test
