// SPDX-License-Identifier: Apache-2.0
#include "gde/enhancer.hpp"

#include <array>
#include <utility>
#include <vector>

#include "gde/flops.hpp"
#include "gde/layers.hpp"
#include "gde/ops.hpp"

namespace gde {

Tensor TokenizedPyramid::embedded() const { return add(tokens, pos_embed); }

TokenizedPyramid flatten_pyramid(const FeaturePyramid& p, std::span<const std::size_t> levels,
                                 const WeightStore& ws) {
  if (levels.empty()) throw ValidationError("flatten_pyramid: no levels requested");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] > kLevelP5 || (i > 0 && levels[i] <= levels[i - 1])) {
      throw ValidationError("flatten_pyramid: levels must be an increasing subset of {0,1,2}");
    }
  }
  const Tensor& level_embed = ws.get("enhancer.level_embed");
  const std::size_t d = p.level(levels.front()).dim(0);
  if (level_embed.dim(1) != d) {
    throw DimensionError("flatten_pyramid: level embedding width does not match features");
  }

  TokenizedPyramid tp;
  std::size_t n = 0;
  for (std::size_t l : levels) {
    const Tensor& m = p.level(l);
    if (m.rank() != 3 || m.dim(0) != d) {
      throw DimensionError("flatten_pyramid: level " + std::to_string(l) + " has shape " +
                           shape_string(m.shape()));
    }
    tp.level_ranges.push_back({l, n, n + m.dim(1) * m.dim(2), m.dim(1), m.dim(2)});
    n += m.dim(1) * m.dim(2);
  }
  tp.tokens = Tensor({n, d});
  tp.pos_embed = Tensor({n, d});
  tp.positions = Tensor({n, 2});
  tp.level_index.resize(n);

  for (const auto& r : tp.level_ranges) {
    const Tensor& m = p.level(r.level);
    const std::size_t plane = r.height * r.width;
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < plane; ++i) tp.tokens(r.begin + i, c) = m[c * plane + i];

    auto lvl = level_embed.row(r.level);
    for (std::size_t y = 0; y < r.height; ++y) {
      for (std::size_t x = 0; x < r.width; ++x) {
        const std::size_t t = r.begin + y * r.width + x;
        const float pos[2] = {(static_cast<float>(x) + 0.5f) / static_cast<float>(r.width),
                              (static_cast<float>(y) + 0.5f) / static_cast<float>(r.height)};
        tp.positions(t, 0) = pos[0];
        tp.positions(t, 1) = pos[1];
        tp.level_index[t] = r.level;
        const auto enc = sine_encoding(pos, d / 2);
        auto dst = tp.pos_embed.row(t);
        for (std::size_t c = 0; c < d; ++c) dst[c] = enc[c] + lvl[c];
      }
    }
  }
  return tp;
}

void unflatten_into(const TokenizedPyramid& layout, const Tensor& tokens, FeaturePyramid& p) {
  if (tokens.rank() != 2 || tokens.dim(0) != layout.size()) {
    throw DimensionError("unflatten: tokens " + shape_string(tokens.shape()) + " do not match " +
                         std::to_string(layout.size()) + " positions");
  }
  const std::size_t d = tokens.dim(1);
  for (const auto& r : layout.level_ranges) {
    Tensor& m = p.level(r.level);
    m = Tensor({d, r.height, r.width});
    const std::size_t plane = r.height * r.width;
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < plane; ++i) m[c * plane + i] = tokens(r.begin + i, c);
  }
}

Tensor deformable_attention(const Tensor& query, const Tensor& reference,
                            const TokenizedPyramid& memory, const WeightStore& ws,
                            const std::string& prefix, std::size_t heads, std::size_t points) {
  if (points == 0) throw ConfigError("deformable attention: points must be positive");
  if (query.rank() != 2 || reference.rank() != 2 || reference.dim(0) != query.dim(0) ||
      reference.dim(1) != 2) {
    throw DimensionError("deformable attention: query " + shape_string(query.shape()) +
                         " with reference " + shape_string(reference.shape()));
  }
  const std::size_t nq = query.dim(0);
  const std::size_t d = query.dim(1);
  const std::size_t levels = memory.level_ranges.size();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("deformable attention: heads must divide width " + std::to_string(d));
  }
  const std::size_t dh = d / heads;
  const std::size_t samples = heads * levels * points;

  const auto offset_ref = linear_ref(ws, prefix + ".offset");
  const auto weight_ref = linear_ref(ws, prefix + ".weight");
  if (offset_ref.weight.dim(1) != 2 * samples || weight_ref.weight.dim(1) != samples) {
    throw DimensionError("deformable attention: parameters under '" + prefix +
                         "' are not sized for " + std::to_string(heads) + " heads x " +
                         std::to_string(levels) + " levels x " + std::to_string(points) +
                         " points");
  }

  const auto value_ref = linear_ref(ws, prefix + ".value");
  const Tensor offsets = linear(query, offset_ref);
  Tensor weights = linear(query, weight_ref);
  weights.reshape({nq * heads, levels * points});
  weights = softmax_lastdim(weights);

  // Sample location (x, y) of sample s for query q.
  auto location = [&](std::size_t q, std::size_t s, std::size_t l) {
    const auto& r = memory.level_ranges[l];
    return std::pair{reference(q, 0) + offsets(q, 2 * s) / static_cast<float>(r.width),
                     reference(q, 1) + offsets(q, 2 * s + 1) / static_cast<float>(r.height)};
  };

  Tensor ctx({nq, d});
  if (nq * levels * points >= memory.size()) {
    // Project every memory token once, then gather per-head slices.
    const Tensor value = linear(memory.tokens, value_ref);
    const auto vdata = value.data();
    for (std::size_t q = 0; q < nq; ++q) {
      for (std::size_t h = 0; h < heads; ++h) {
        auto out = ctx.row(q).subspan(h * dh, dh);
        for (std::size_t l = 0; l < levels; ++l) {
          const auto& r = memory.level_ranges[l];
          const auto map = vdata.subspan(r.begin * d + h * dh, (r.end - r.begin - 1) * d + dh);
          for (std::size_t k = 0; k < points; ++k) {
            const std::size_t s = (h * levels + l) * points + k;
            const auto [x, y] = location(q, s, l);
            bilinear_accumulate<float>(map, r.height, r.width, d, dh, x, y,
                                       weights(q * heads + h, l * points + k), out);
          }
        }
      }
    }
    flops::record(flops::bilinear(nq * samples, dh));
  } else {
    // Few queries: sampling commutes with the value projection, so gather raw
    // memory rows and project only those. `mass` carries the in-bounds
    // bilinear weight that multiplies the projection bias.
    Tensor gathered({nq * heads, d});
    std::vector<float> mass(nq * heads, 0.0f);
    const float one = 1.0f;
    const auto mdata = memory.tokens.data();
    for (std::size_t q = 0; q < nq; ++q) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qh = q * heads + h;
        for (std::size_t l = 0; l < levels; ++l) {
          const auto& r = memory.level_ranges[l];
          const auto map = mdata.subspan(r.begin * d, (r.end - r.begin) * d);
          for (std::size_t k = 0; k < points; ++k) {
            const std::size_t s = (h * levels + l) * points + k;
            const auto [x, y] = location(q, s, l);
            const float a = weights(qh, l * points + k);
            bilinear_accumulate<float>(map, r.height, r.width, d, d, x, y, a, gathered.row(qh));
            bilinear_accumulate<float>(std::span(&one, 1), r.height, r.width, 0, 1, x, y, a,
                                       std::span(&mass[qh], 1));
          }
        }
      }
    }
    for (std::size_t q = 0; q < nq; ++q) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qh = q * heads + h;
        auto g = gathered.row(qh);
        auto out = ctx.row(q).subspan(h * dh, dh);
        for (std::size_t j = 0; j < dh; ++j) out[j] = mass[qh] * value_ref.bias[h * dh + j];
        for (std::size_t c = 0; c < d; ++c) {
          for (std::size_t j = 0; j < dh; ++j) out[j] += g[c] * value_ref.weight(c, h * dh + j);
        }
      }
    }
    flops::record(flops::bilinear(nq * samples, d) + flops::matmul(nq * heads, d, dh));
  }
  return linear(ctx, linear_ref(ws, prefix + ".out"));
}

Tensor deformable_self_attention(const TokenizedPyramid& tp, const WeightStore& ws,
                                 const std::string& prefix, const std::string& norm_prefix,
                                 std::size_t heads, std::size_t points) {
  Tensor y = deformable_attention(tp.embedded(), tp.positions, tp, ws, prefix, heads, points);
  add_inplace(y, tp.tokens);
  return layer_norm(y, norm_ref(ws, norm_prefix));
}

Tensor vanilla_self_attention(const TokenizedPyramid& tp, const WeightStore& ws,
                              const std::string& prefix, const std::string& norm_prefix,
                              std::size_t heads) {
  const Tensor qk = tp.embedded();
  Tensor y = multi_head_attention(qk, qk, tp.tokens, attention_ref(ws, prefix, heads));
  add_inplace(y, tp.tokens);
  return layer_norm(y, norm_ref(ws, norm_prefix));
}

std::pair<Tensor, Tensor> cross_modality_fusion(const Tensor& img_tokens, const Tensor& text,
                                                const WeightStore& ws, const std::string& prefix,
                                                std::size_t heads) {
  if (img_tokens.rank() != 2 || text.rank() != 2 || img_tokens.dim(1) != text.dim(1)) {
    throw DimensionError("cross_modality_fusion: image " + shape_string(img_tokens.shape()) +
                         " and text " + shape_string(text.shape()) + " widths differ");
  }
  const Tensor ni = layer_norm(img_tokens, norm_ref(ws, prefix + ".img_norm"));
  const Tensor nt = layer_norm(text, norm_ref(ws, prefix + ".text_norm"));
  Tensor img = add(img_tokens, multi_head_attention(ni, nt, nt, attention_ref(ws, prefix + ".img_attn", heads)));
  Tensor txt = add(text, multi_head_attention(nt, ni, ni, attention_ref(ws, prefix + ".text_attn", heads)));
  return {std::move(img), std::move(txt)};
}

FeaturePyramid cross_scale_fusion(const Tensor& p3, const Tensor& p4, const Tensor& p5_enhanced,
                                  const WeightStore& ws) {
  const auto& p5 = p5_enhanced;
  if (p3.rank() != 3 || p4.rank() != 3 || p5.rank() != 3 || p3.dim(0) != p4.dim(0) ||
      p4.dim(0) != p5.dim(0) || p4.dim(1) != 2 * p5.dim(1) || p4.dim(2) != 2 * p5.dim(2) ||
      p3.dim(1) != 2 * p4.dim(1) || p3.dim(2) != 2 * p4.dim(2)) {
    throw DimensionError("cross_scale_fusion: inconsistent levels " + shape_string(p3.shape()) +
                         ", " + shape_string(p4.shape()) + ", " + shape_string(p5.shape()));
  }
  flops::Stage stage("cross-scale-fusion");
  auto conv = [&](const Tensor& x, const std::string& name, std::size_t stride, std::size_t pad) {
    return conv2d(x, ws.get(name + ".weight"), ws.get(name + ".bias"), stride, pad);
  };
  auto fuse = [&](const Tensor& target, const Tensor& other, const std::string& name) {
    const Tensor hidden = gelu(conv(concat_channels(target, other), name + ".reduce", 1, 0));
    Tensor y = conv(hidden, name + ".mix", 1, 1);
    add_inplace(y, target);
    return y;
  };

  const Tensor p4_td = fuse(p4, upsample_nearest2x(p5), "cross_scale.td4");
  FeaturePyramid out;
  out.p3 = fuse(p3, upsample_nearest2x(p4_td), "cross_scale.td3");
  out.p4 = fuse(p4_td, gelu(conv(out.p3, "cross_scale.down3", 2, 1)), "cross_scale.bu4");
  out.p5 = fuse(p5, gelu(conv(out.p4, "cross_scale.down4", 2, 1)), "cross_scale.bu5");
  return out;
}

namespace {

// One enhancer layer after the image self-attention has been applied.
void fuse_and_feed_forward(Tensor& img, Tensor& text, const Mask& phrase_mask,
                           const EnhancerConfig& cfg, const WeightStore& ws,
                           const std::string& p) {
  if (cfg.fusion_mode == FusionMode::early) {
    flops::Stage stage("enhancer-fusion");
    auto [i2, t2] = cross_modality_fusion(img, text, ws, p + ".fusion", cfg.heads);
    img = std::move(i2);
    text = std::move(t2);
  }
  flops::Stage stage("enhancer-self-attn");
  {
    Tensor y = multi_head_attention(text, text, text, attention_ref(ws, p + ".text_attn", cfg.heads),
                                    &phrase_mask);
    add_inplace(y, text);
    text = layer_norm(y, norm_ref(ws, p + ".text_attn_norm"));
  }
  {
    Tensor y = feed_forward(img, ws, p + ".img_ffn");
    add_inplace(y, img);
    img = layer_norm(y, norm_ref(ws, p + ".img_ffn_norm"));
  }
  {
    Tensor y = feed_forward(text, ws, p + ".text_ffn");
    add_inplace(y, text);
    text = layer_norm(y, norm_ref(ws, p + ".text_ffn_norm"));
  }
}

void check_text(const TextFeatures& text, std::size_t d) {
  if (text.features.rank() != 2 || text.features.dim(1) != d) {
    throw DimensionError("enhancer: text features " + shape_string(text.features.shape()) +
                         " do not match image width " + std::to_string(d));
  }
}

}  // namespace

EnhancedFeatures original_enhancer_forward(const FeaturePyramid& p, const TextFeatures& text,
                                           const EnhancerConfig& cfg, const WeightStore& ws) {
  if (cfg.variant != EnhancerVariant::original) {
    throw ConfigError("original_enhancer_forward: config selects the efficient variant");
  }
  if (cfg.deformable_points == 0) throw ConfigError("enhancer: deformable_points must be positive");
  check_text(text, p.p3.dim(0));
  constexpr std::array<std::size_t, 3> all{kLevelP3, kLevelP4, kLevelP5};
  TokenizedPyramid tp = flatten_pyramid(p, all, ws);
  const Mask phrase_mask = build_phrase_mask(text.phrase_spans, text.num_tokens());

  Tensor txt = text.features;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "enhancer.layer" + std::to_string(l);
    {
      flops::Stage stage("enhancer-self-attn");
      tp.tokens = deformable_self_attention(tp, ws, pre + ".deform", pre + ".deform_norm",
                                            cfg.heads, cfg.deformable_points);
    }
    fuse_and_feed_forward(tp.tokens, txt, phrase_mask, cfg, ws, pre);
  }

  EnhancedFeatures out{p, {std::move(txt), text.phrase_spans}};
  unflatten_into(tp, tp.tokens, out.pyramid);
  return out;
}

EnhancedFeatures efficient_enhancer_forward(const FeaturePyramid& p, const TextFeatures& text,
                                            const EnhancerConfig& cfg, const WeightStore& ws) {
  if (cfg.variant != EnhancerVariant::efficient) {
    throw ConfigError("efficient_enhancer_forward: config selects the original variant");
  }
  check_text(text, p.p5.dim(0));
  constexpr std::array<std::size_t, 1> p5_only{kLevelP5};
  TokenizedPyramid tp = flatten_pyramid(p, p5_only, ws);
  const Mask phrase_mask = build_phrase_mask(text.phrase_spans, text.num_tokens());

  Tensor txt = text.features;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "enhancer.layer" + std::to_string(l);
    {
      flops::Stage stage("enhancer-self-attn");
      tp.tokens = vanilla_self_attention(tp, ws, pre + ".vanilla", pre + ".vanilla_norm", cfg.heads);
    }
    fuse_and_feed_forward(tp.tokens, txt, phrase_mask, cfg, ws, pre);
  }

  FeaturePyramid enhanced_p5 = p;
  unflatten_into(tp, tp.tokens, enhanced_p5);
  return {cross_scale_fusion(p.p3, p.p4, enhanced_p5.p5, ws), {std::move(txt), text.phrase_spans}};
}

EnhancedFeatures enhance(const FeaturePyramid& p, const TextFeatures& text,
                         const EnhancerConfig& cfg, const WeightStore& ws) {
  return cfg.variant == EnhancerVariant::original ? original_enhancer_forward(p, text, cfg, ws)
                                                  : efficient_enhancer_forward(p, text, cfg, ws);
}

}  // namespace gde
