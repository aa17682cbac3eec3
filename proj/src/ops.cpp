// SPDX-License-Identifier: Apache-2.0
#include "gde/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gde/flops.hpp"

namespace gde {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {

template <typename T>
void require_rank(const BasicTensor<T>& x, std::size_t rank, const char* what) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(x.shape()));
  }
}

// c[m,n] += a[m,k] @ b[k,n] on raw row-major buffers, t-ordered accumulation.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = ai[t];
      const T* bt = b + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> c({m, n});
  gemm_accumulate(a.data().data(), b.data().data(), c.data().data(), m, k, n);
  flops::record(flops::matmul(m, k, n));
  return c;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearRef<T>& p) {
  if (p.bias.size() != p.weight.dim(1)) {
    throw DimensionError("linear: bias " + shape_string(p.bias.shape()) +
                         " does not match weight " + shape_string(p.weight.shape()));
  }
  BasicTensor<T> y = matmul(x, p.weight);
  const std::size_t n = y.dim(1);
  auto bias = p.bias.data();
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    auto row = y.row(i);
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
  return y;
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_lastdim: empty last dimension in " + shape_string(x.shape()));
  }
  BasicTensor<T> y = x;
  const std::size_t n = x.shape().back();
  auto data = y.data();
  for (std::size_t off = 0; off < data.size(); off += n) {
    auto row = data.subspan(off, n);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return y;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
  if (!(eps > 0)) throw ValidationError("layer_norm: eps must be positive");
  const std::size_t d = x.rank() == 0 ? 0 : x.shape().back();
  if (d == 0 || gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) + " with gamma " +
                         shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()));
  }
  BasicTensor<T> y = x;
  auto data = y.data();
  auto g = gamma.data();
  auto b = beta.data();
  for (std::size_t off = 0; off < data.size(); off += d) {
    auto row = data.subspan(off, d);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= static_cast<T>(d);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < d; ++j) row[j] = g[j] * (row[j] - mean) * inv + b[j];
  }
  return y;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  constexpr T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  for (auto& v : y.data()) v = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  return y;
}

template <typename T>
void add_inplace(BasicTensor<T>& x, const BasicTensor<T>& y) {
  if (x.shape() != y.shape()) {
    throw DimensionError("add: shapes " + shape_string(x.shape()) + " and " +
                         shape_string(y.shape()));
  }
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += yd[i];
}

template <typename T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                            const BasicTensor<T>& v, std::size_t heads,
                                            const Mask* mask) {
  require_rank(q, 2, "attention query");
  require_rank(k, 2, "attention key");
  require_rank(v, 2, "attention value");
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != nk) {
    throw DimensionError("attention: incompatible q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (mask != nullptr && (mask->rows() != nq || mask->cols() != nk)) {
    throw DimensionError("attention: mask shape does not match (" + std::to_string(nq) + "," +
                         std::to_string(nk) + ")");
  }
  if (nk == 0) throw ContractError("attention: no keys");

  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  BasicTensor<T> out({nq, d});

  std::vector<T> qh(nq * dh), kt(dh * nk), vh(nk * dh), scores(nq * nk), ctx(nq * dh);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t c = 0; c < dh; ++c) qh[i * dh + c] = q(i, c0 + c) * scale;
    for (std::size_t j = 0; j < nk; ++j)
      for (std::size_t c = 0; c < dh; ++c) {
        kt[c * nk + j] = k(j, c0 + c);
        vh[j * dh + c] = v(j, c0 + c);
      }
    std::fill(scores.begin(), scores.end(), T{0});
    gemm_accumulate(qh.data(), kt.data(), scores.data(), nq, dh, nk);

    for (std::size_t i = 0; i < nq; ++i) {
      T* row = scores.data() + i * nk;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < nk; ++j) {
        if (mask != nullptr && !(*mask)(i, j)) continue;
        mx = std::max(mx, row[j]);
        any = true;
      }
      if (!any) {
        throw ContractError("attention: query row " + std::to_string(i) +
                            " has every key masked");
      }
      T sum = 0;
      for (std::size_t j = 0; j < nk; ++j) {
        if (mask != nullptr && !(*mask)(i, j)) {
          row[j] = 0;
          continue;
        }
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::size_t j = 0; j < nk; ++j) row[j] /= sum;
    }

    std::fill(ctx.begin(), ctx.end(), T{0});
    gemm_accumulate(scores.data(), vh.data(), ctx.data(), nq, nk, dh);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t c = 0; c < dh; ++c) out(i, c0 + c) = ctx[i * dh + c];
  }
  flops::record(flops::attention(nq, nk, d));
  return out;
}

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, const AttentionRef<T>& p,
                                    const Mask* mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.dim(0) != v.dim(0)) {
    throw DimensionError("multi_head_attention: incompatible q " + shape_string(q.shape()) +
                         ", k " + shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  // Validate the mask before spending work on projections.
  if (mask != nullptr) {
    if (mask->rows() != q.dim(0) || mask->cols() != k.dim(0)) {
      throw DimensionError("multi_head_attention: mask shape does not match queries/keys");
    }
    for (std::size_t i = 0; i < mask->rows(); ++i) {
      bool any = false;
      for (std::size_t j = 0; j < mask->cols() && !any; ++j) any = (*mask)(i, j);
      if (!any) {
        throw ContractError("multi_head_attention: query row " + std::to_string(i) +
                            " has every key masked");
      }
    }
  }
  const auto qp = linear(q, p.query);
  const auto kp = linear(k, p.key);
  const auto vp = linear(v, p.value);
  const auto ctx = scaled_dot_product_attention(qp, kp, vp, p.heads, mask);
  return linear(ctx, p.out);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::size_t stride,
                      std::size_t padding) {
  require_rank(x, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw ValidationError("conv2d: stride must be >= 1");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " does not match input " + shape_string(x.shape()));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " larger than padded input " + shape_string(x.shape()));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t patch = cin * kh * kw;
  BasicTensor<T> out({cout, ho, wo});

  if (kh == 1 && kw == 1 && stride == 1 && padding == 0) {
    gemm_accumulate(kernel.data().data(), x.data().data(), out.data().data(), cout, cin, ho * wo);
  } else {
    std::vector<T> cols(patch * ho * wo, T{0});
    const auto* src = x.data().data();
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          T* dst = cols.data() + ((c * kh + ky) * kw + kx) * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              dst[oy * wo + ox] = src[(c * h + static_cast<std::size_t>(iy)) * w +
                                      static_cast<std::size_t>(ix)];
            }
          }
        }
    gemm_accumulate(kernel.data().data(), cols.data(), out.data().data(), cout, patch, ho * wo);
  }
  flops::record(flops::conv(cout, cin, kh, kw, ho, wo));
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding) {
  BasicTensor<T> out = conv2d(x, kernel, stride, padding);
  if (bias.size() != out.dim(0)) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " for " +
                         std::to_string(out.dim(0)) + " output channels");
  }
  const std::size_t plane = out.dim(1) * out.dim(2);
  auto data = out.data();
  for (std::size_t c = 0; c < out.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) data[c * plane + i] += bias[c];
  return out;
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  require_rank(x, 3, "upsample");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  BasicTensor<T> y({c, 2 * h, 2 * w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) y(k, i, j) = x(k, i / 2, j / 2);
  return y;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 3, "concat");
  require_rank(b, 3, "concat");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels: spatial mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return BasicTensor<T>({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(data));
}

template <typename T>
void bilinear_accumulate(std::span<const T> map, std::size_t height, std::size_t width,
                         std::size_t row_stride, std::size_t channels, T x, T y, T weight,
                         std::span<T> out) {
  const T px = x * static_cast<T>(width) - T{0.5};
  const T py = y * static_cast<T>(height) - T{0.5};
  const T fx = std::floor(px);
  const T fy = std::floor(py);
  // Entirely outside: every corner reads zero.
  if (fx < T{-1} || fy < T{-1} || fx >= static_cast<T>(width) || fy >= static_cast<T>(height)) {
    return;
  }
  const auto x0 = static_cast<std::ptrdiff_t>(fx);
  const auto y0 = static_cast<std::ptrdiff_t>(fy);
  const T lx = px - fx, ly = py - fy;
  const T hx = T{1} - lx, hy = T{1} - ly;
  const std::ptrdiff_t xs[2] = {x0, x0 + 1};
  const std::ptrdiff_t ys[2] = {y0, y0 + 1};
  const T wx[2] = {hx, lx};
  const T wy[2] = {hy, ly};
  for (int a = 0; a < 2; ++a) {
    if (ys[a] < 0 || ys[a] >= static_cast<std::ptrdiff_t>(height)) continue;
    for (int b = 0; b < 2; ++b) {
      if (xs[b] < 0 || xs[b] >= static_cast<std::ptrdiff_t>(width)) continue;
      const T cw = weight * wy[a] * wx[b];
      const T* src = map.data() + (static_cast<std::size_t>(ys[a]) * width +
                                   static_cast<std::size_t>(xs[b])) *
                                      row_stride;
      for (std::size_t c = 0; c < channels; ++c) out[c] += cw * src[c];
    }
  }
}

template <typename T>
BasicTensor<T> bilinear_sample(const BasicTensor<T>& map, const BasicTensor<T>& points) {
  require_rank(map, 3, "bilinear_sample map");
  if (points.rank() != 2 || points.dim(1) != 2) {
    throw DimensionError("bilinear_sample: points must be [P,2], got " +
                         shape_string(points.shape()));
  }
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2), np = points.dim(0);
  // Transpose to channel-last so each corner read is contiguous.
  std::vector<T> hwc(h * w * c);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h * w; ++i) hwc[i * c + k] = map[k * h * w + i];
  BasicTensor<T> out({np, c});
  for (std::size_t p = 0; p < np; ++p) {
    bilinear_accumulate<T>(hwc, h, w, c, c, points(p, 0), points(p, 1), T{1}, out.row(p));
  }
  flops::record(flops::bilinear(np, c));
  return out;
}

#define GDE_INSTANTIATE(T)                                                                       \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> linear(const BasicTensor<T>&, const LinearRef<T>&);                    \
  template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&);                                \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, double);                             \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                           \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> scaled_dot_product_attention(                                          \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,          \
      const Mask*);                                                                              \
  template BasicTensor<T> multi_head_attention(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                               const BasicTensor<T>&, const AttentionRef<T>&,    \
                                               const Mask*);                                     \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,      \
                                 std::size_t);                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&, std::size_t, std::size_t);               \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                             \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template void bilinear_accumulate(std::span<const T>, std::size_t, std::size_t, std::size_t,   \
                                    std::size_t, T, T, T, std::span<T>);                         \
  template BasicTensor<T> bilinear_sample(const BasicTensor<T>&, const BasicTensor<T>&);

GDE_INSTANTIATE(float)
GDE_INSTANTIATE(double)

#undef GDE_INSTANTIATE

}  // namespace gde
