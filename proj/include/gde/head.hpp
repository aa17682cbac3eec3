// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "gde/backbone.hpp"
#include "gde/config.hpp"
#include "gde/enhancer.hpp"
#include "gde/tensor.hpp"
#include "gde/text.hpp"
#include "gde/weights.hpp"

namespace gde {

struct QuerySet {
  Tensor content;  // [K, d]
  Tensor anchors;  // [K, 4] normalized cxcywh in (0,1)
  /// Image token each query was selected from, and its selection score.
  std::vector<std::size_t> source_token;
  std::vector<float> scores;

  std::size_t size() const noexcept { return source_token.size(); }
};

/// Ranks image tokens by their best dot product with any text token and
/// turns the top `k` into decoder queries (ties keep token order).
QuerySet language_guided_query_selection(const TokenizedPyramid& img, const TextFeatures& text,
                                         std::size_t k, const WeightStore& ws);

struct DecoderOutput {
  Tensor content;  // [layers, K, d]
  Tensor anchors;  // [layers, K, 4]
  QuerySet final;  // last layer (the input set when layers == 0)
};

/// DETR-style decoder: query self-attention, deformable cross-attention to
/// image tokens around each anchor centre, cross-attention to text, FFN, and
/// additive box refinement in inverse-sigmoid space.
DecoderOutput decoder_forward(const QuerySet& q, const TokenizedPyramid& img,
                              const TextFeatures& text, const WeightStore& ws,
                              const HeadConfig& cfg, std::size_t layers);

/// logit(k, j) = max over tokens t of phrase j of dot(content_k, text_t) / sqrt(d).
Tensor contrastive_logits(const Tensor& content, const TextFeatures& text);

struct DetectionSet {
  Tensor boxes;  // [M, 4] normalized cxcywh on the model canvas
  std::vector<float> scores;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> source_token;

  std::size_t size() const noexcept { return scores.size(); }
  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

/// Sigmoid of the best phrase logit per query, threshold, sort descending
/// (ties by query order), truncate. No NMS.
DetectionSet postprocess(const Tensor& logits, const Tensor& boxes, float threshold,
                         std::size_t max_detections,
                         const std::vector<std::size_t>& source_token = {});

struct ModelOutputs {
  FeaturePyramid backbone;
  EnhancedFeatures enhanced;
  QuerySet queries;
  DecoderOutput decoder;
  Tensor logits;
  DetectionSet detections;
};

/// Full forward pass on a preprocessed image. The query count is capped at
/// the number of image tokens so that small inputs still run.
ModelOutputs run_model(const Image& img, const Prompt& prompt, const WeightStore& ws,
                       const ModelConfig& cfg);

/// preprocess -> backbone -> enhancer -> query selection -> decoder ->
/// logits -> postprocess.
DetectionSet predict(const RawImage& image, const Prompt& prompt, const WeightStore& ws,
                     const ModelConfig& cfg);

}  // namespace gde
