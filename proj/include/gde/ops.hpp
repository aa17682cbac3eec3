// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "gde/tensor.hpp"

namespace gde {

// Parameter views. Weights are stored [in, out] so that a linear layer is a
// plain row-major matmul.
template <typename T>
struct LinearRef {
  const BasicTensor<T>& weight;
  const BasicTensor<T>& bias;
};

template <typename T>
struct NormRef {
  const BasicTensor<T>& gamma;
  const BasicTensor<T>& beta;
};

template <typename T>
struct AttentionRef {
  LinearRef<T> query;
  LinearRef<T> key;
  LinearRef<T> value;
  LinearRef<T> out;
  std::size_t heads;
};

inline constexpr double kLayerNormEps = 1e-5;

/// c[i][j] = sum_t a[i][t] * b[t][j], accumulated in t order.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x[N, in] @ weight[in, out] + bias[out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearRef<T>& p);

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x);

/// Per-row normalization over the last dimension with biased variance.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = kLayerNormEps);

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const NormRef<T>& p) {
  return layer_norm(x, p.gamma, p.beta, kLayerNormEps);
}

/// Exact (erf) GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

template <typename T>
void add_inplace(BasicTensor<T>& x, const BasicTensor<T>& y);

template <typename T>
BasicTensor<T> add(BasicTensor<T> x, const BasicTensor<T>& y) {
  add_inplace(x, y);
  return x;
}

/// Multi-head scaled dot-product attention on already-projected inputs.
/// q [Nq, d], k [Nk, d], v [Nk, d]; scale 1/sqrt(d/heads). Masked pairs get
/// -inf before the softmax; a query with no permitted key is a ContractError.
template <typename T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                            const BasicTensor<T>& v, std::size_t heads,
                                            const Mask* mask = nullptr);

/// Projects q/k/v, attends per head, concatenates, and output-projects.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, const AttentionRef<T>& p,
                                    const Mask* mask = nullptr);

/// x [c_in, H, W], kernel [c_out, c_in, kh, kw], zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::size_t stride,
                      std::size_t padding);

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding);

/// Nearest-neighbour x2 upsampling of [c, H, W].
template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

/// Concatenates [c1, H, W] and [c2, H, W] along channels.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Samples map [c, H, W] at normalized points [P, 2] given as (x, y) in
/// [0,1]^2, align-corners-false. Corners outside the map read as zero.
/// Returns [P, c].
template <typename T>
BasicTensor<T> bilinear_sample(const BasicTensor<T>& map, const BasicTensor<T>& points);

/// Channel-last variant used by deformable attention: `map` holds H*W rows
/// of `row_stride` values; `channels` values starting at `map[0]` of each row
/// are sampled at normalized (x, y) and accumulated into `out` scaled by
/// `weight`. Does not report FLOPs; callers account in bulk.
template <typename T>
void bilinear_accumulate(std::span<const T> map, std::size_t height, std::size_t width,
                         std::size_t row_stride, std::size_t channels, T x, T y, T weight,
                         std::span<T> out);

}  // namespace gde
