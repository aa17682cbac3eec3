// SPDX-License-Identifier: Apache-2.0
#include "gde/head.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "gde/flops.hpp"
#include "gde/layers.hpp"
#include "gde/ops.hpp"

namespace gde {

namespace {

constexpr float kLogitClamp = 10.0f;

float inverse_sigmoid(float x) {
  x = std::clamp(x, 1e-5f, 1.0f - 1e-5f);
  return std::log(x / (1.0f - x));
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

QuerySet language_guided_query_selection(const TokenizedPyramid& img, const TextFeatures& text,
                                         std::size_t k, const WeightStore& ws) {
  const std::size_t n = img.size();
  if (k == 0 || k > n) {
    throw ValidationError("query selection: K=" + std::to_string(k) + " outside [1, " +
                          std::to_string(n) + "]");
  }
  const std::size_t d = img.tokens.dim(1);
  const std::size_t t = text.num_tokens();
  if (t == 0 || text.features.dim(1) != d) {
    throw DimensionError("query selection: text features " + shape_string(text.features.shape()) +
                         " incompatible with image width " + std::to_string(d));
  }

  std::vector<float> score(n, -std::numeric_limits<float>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    auto a = img.tokens.row(i);
    for (std::size_t j = 0; j < t; ++j) {
      auto b = text.features.row(j);
      float dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += a[c] * b[c];
      score[i] = std::max(score[i], dot);
    }
  }
  flops::record(flops::matmul(n, d, t));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(k);

  QuerySet q;
  Tensor picked({k, d});
  q.anchors = Tensor({k, 4});
  const Tensor& size_offset = ws.get("head.anchor_size_offset");
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t tok = order[i];
    std::copy_n(img.tokens.row(tok).begin(), d, picked.row(i).begin());
    const std::size_t level = img.level_index[tok];
    const float base = 0.05f * static_cast<float>(1u << level);
    const float side = sigmoid(inverse_sigmoid(base) + size_offset[level]);
    q.anchors(i, 0) = img.positions(tok, 0);
    q.anchors(i, 1) = img.positions(tok, 1);
    q.anchors(i, 2) = side;
    q.anchors(i, 3) = side;
    q.source_token.push_back(tok);
    q.scores.push_back(score[tok]);
  }
  q.content = linear(picked, linear_ref(ws, "head.query_proj"));
  return q;
}

DecoderOutput decoder_forward(const QuerySet& q, const TokenizedPyramid& img,
                              const TextFeatures& text, const WeightStore& ws,
                              const HeadConfig& cfg, std::size_t layers) {
  const std::size_t k = q.size();
  const std::size_t d = q.content.dim(1);
  if (q.content.dim(0) != k || q.anchors.dim(0) != k || q.anchors.dim(1) != 4) {
    throw DimensionError("decoder: query set shapes are inconsistent");
  }
  if (d % 4 != 0) throw ConfigError("decoder: width must be divisible by 4");

  DecoderOutput out;
  out.content = Tensor({layers, k, d});
  out.anchors = Tensor({layers, k, 4});
  out.final = q;

  Tensor& c = out.final.content;
  Tensor& a = out.final.anchors;
  Tensor centres({k, 2});
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    const Tensor pos = linear(Tensor({k, d}, sine_encoding(a.data(), d / 4)),
                              linear_ref(ws, p + ".query_pos"));
    {
      const Tensor qk = add(c, pos);
      Tensor y = multi_head_attention(qk, qk, c, attention_ref(ws, p + ".self_attn", cfg.heads));
      add_inplace(y, c);
      c = layer_norm(y, norm_ref(ws, p + ".self_norm"));
    }
    {
      for (std::size_t i = 0; i < k; ++i) {
        centres(i, 0) = a(i, 0);
        centres(i, 1) = a(i, 1);
      }
      Tensor y = deformable_attention(add(c, pos), centres, img, ws, p + ".img_cross", cfg.heads,
                                      cfg.decoder_points);
      add_inplace(y, c);
      c = layer_norm(y, norm_ref(ws, p + ".img_norm"));
    }
    {
      Tensor y = multi_head_attention(add(c, pos), text.features, text.features,
                                      attention_ref(ws, p + ".text_cross", cfg.heads));
      add_inplace(y, c);
      c = layer_norm(y, norm_ref(ws, p + ".text_norm"));
    }
    {
      Tensor y = feed_forward(c, ws, p + ".ffn");
      add_inplace(y, c);
      c = layer_norm(y, norm_ref(ws, p + ".ffn_norm"));
    }
    const Tensor delta = feed_forward(c, ws, p + ".box");
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = sigmoid(std::clamp(inverse_sigmoid(a[i]) + delta[i], -kLogitClamp, kLogitClamp));
    }
    std::copy(c.data().begin(), c.data().end(), out.content.data().begin() + l * k * d);
    std::copy(a.data().begin(), a.data().end(), out.anchors.data().begin() + l * k * 4);
  }
  return out;
}

Tensor contrastive_logits(const Tensor& content, const TextFeatures& text) {
  const std::size_t d = content.dim(1);
  if (text.features.rank() != 2 || text.features.dim(1) != d) {
    throw DimensionError("contrastive_logits: content " + shape_string(content.shape()) +
                         " vs text " + shape_string(text.features.shape()));
  }
  const std::size_t k = content.dim(0);
  const std::size_t phrases = text.num_phrases();
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  Tensor logits({k, phrases});
  for (std::size_t i = 0; i < k; ++i) {
    auto ci = content.row(i);
    for (std::size_t j = 0; j < phrases; ++j) {
      const auto& span = text.phrase_spans[j];
      float best = -std::numeric_limits<float>::infinity();
      for (std::size_t t = span.begin; t < span.end; ++t) {
        auto tt = text.features.row(t);
        float dot = 0;
        for (std::size_t c = 0; c < d; ++c) dot += ci[c] * tt[c];
        best = std::max(best, dot * scale);
      }
      logits(i, j) = best;
    }
  }
  flops::record(flops::matmul(k, d, text.num_tokens()));
  return logits;
}

DetectionSet postprocess(const Tensor& logits, const Tensor& boxes, float threshold,
                         std::size_t max_detections, const std::vector<std::size_t>& source_token) {
  if (!(threshold >= 0.0f && threshold <= 1.0f)) {
    throw ValidationError("postprocess: threshold must be in [0,1]");
  }
  if (logits.rank() != 2 || boxes.rank() != 2 || boxes.dim(1) != 4 ||
      boxes.dim(0) != logits.dim(0)) {
    throw DimensionError("postprocess: logits " + shape_string(logits.shape()) + " vs boxes " +
                         shape_string(boxes.shape()));
  }
  const std::size_t k = logits.dim(0);
  struct Candidate {
    std::size_t query;
    double score;
    std::size_t label;
  };
  std::vector<Candidate> kept;
  for (std::size_t i = 0; i < k; ++i) {
    auto row = logits.row(i);
    if (row.empty()) break;
    const auto best = std::max_element(row.begin(), row.end());
    const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(*best)));
    if (score >= threshold) {
      kept.push_back({i, score, static_cast<std::size_t>(best - row.begin())});
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (kept.size() > max_detections) kept.resize(max_detections);

  DetectionSet det;
  det.boxes = Tensor({kept.size(), 4});
  for (std::size_t m = 0; m < kept.size(); ++m) {
    const auto& c = kept[m];
    std::copy_n(boxes.row(c.query).begin(), 4, det.boxes.row(m).begin());
    det.scores.push_back(static_cast<float>(c.score));
    det.labels.push_back(c.label);
    det.source_token.push_back(source_token.empty() ? c.query : source_token[c.query]);
  }
  return det;
}

ModelOutputs run_model(const Image& img, const Prompt& prompt, const WeightStore& ws,
                       const ModelConfig& cfg) {
  cfg.validate();
  ModelOutputs out;
  out.backbone = extract_pyramid(img, ws, cfg);
  const TokenizedPrompt tp = tokenize(prompt, cfg.text.vocab);
  const TextFeatures text = encode_text(tp, ws, cfg);
  out.enhanced = enhance(out.backbone, text, cfg.enhancer, ws);

  constexpr std::array<std::size_t, 3> all{kLevelP3, kLevelP4, kLevelP5};
  const TokenizedPyramid memory = flatten_pyramid(out.enhanced.pyramid, all, ws);
  {
    flops::Stage stage("heads");
    out.queries = language_guided_query_selection(
        memory, out.enhanced.text, std::min(cfg.head.num_queries, memory.size()), ws);
  }
  {
    flops::Stage stage("decoder");
    out.decoder = decoder_forward(out.queries, memory, out.enhanced.text, ws, cfg.head,
                                  cfg.head.decoder_layers);
  }
  {
    flops::Stage stage("heads");
    out.logits = contrastive_logits(out.decoder.final.content, out.enhanced.text);
  }
  out.detections = postprocess(out.logits, out.decoder.final.anchors, cfg.head.threshold,
                               cfg.head.max_detections, out.queries.source_token);
  return out;
}

DetectionSet predict(const RawImage& image, const Prompt& prompt, const WeightStore& ws,
                     const ModelConfig& cfg) {
  const Image img = preprocess_image(image, cfg.image_size);
  return run_model(img, prompt, ws, cfg).detections;
}

}  // namespace gde
