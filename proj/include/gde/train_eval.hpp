// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gde/tensor.hpp"
#include "gde/text.hpp"

namespace gde {

/// Axis-aligned box, centre/size form.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  static Box from_xyxy(double x1, double y1, double x2, double y2) {
    return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

double box_iou(const Box& a, const Box& b);

/// IoU - (enclosure - union) / enclosure, in (-1, 1]. Non-positive width or
/// height is a ValidationError.
double generalized_iou(const Box& a, const Box& b);

struct GiouGradient {
  double value = 0;
  std::array<double, 4> d_a{};  // d GIoU / d (cx, cy, w, h) of `a`
  std::uint64_t branch = 0;     // which side of every min/max was taken
};

GiouGradient generalized_iou_gradient(const Box& a, const Box& b);

// ---------------------------------------------------------------------------
// Set-prediction loss

struct GroundTruth {
  TensorD boxes;  // [G, 4] normalized cxcywh
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct MatchPair {
  std::size_t query = 0;
  std::size_t target = 0;
  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // sorted by query
  double total_cost = 0;
};

/// Minimum-cost injective assignment of min(K, G) pairs on a [K, G] cost
/// matrix (shortest augmenting paths with potentials, O(n^2 m)).
MatchResult hungarian_match(const TensorD& cost);

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct LossBreakdown {
  double cls = 0;
  double l1 = 0;
  double giou = 0;
  double total = 0;
};

/// Matching cost [K, G]: weighted focal benefit of the GT label, L1 box
/// distance, and 1 - GIoU.
TensorD matching_cost(const TensorD& logits, const TensorD& boxes, const GroundTruth& gt,
                      const LossWeights& w = {});

struct LossEvaluation {
  LossBreakdown loss;
  TensorD d_logits;  // d total / d logits
  TensorD d_boxes;   // d total / d boxes
  MatchResult match;
  /// Hash of every discrete choice (matching, L1 signs, GIoU min/max sides).
  std::uint64_t branch = 0;
};

/// Focal classification over all queries x phrases (matched pairs are the
/// positives), L1 and GIoU over matched pairs, each normalized by max(G, 1).
/// logits [K, P], boxes [K, 4]; a GT label >= P is a ValidationError.
LossEvaluation detection_loss_with_grad(const TensorD& logits, const TensorD& boxes,
                                        const GroundTruth& gt, const LossWeights& w = {});

LossBreakdown detection_loss(const TensorD& logits, const TensorD& boxes, const GroundTruth& gt,
                             const LossWeights& w = {});

/// GT categories plus ceil(ratio * |gt|) distinct categories drawn from
/// pool \ gt, shuffled deterministically by `seed`.
Prompt sample_negative_prompts(std::span<const std::string> gt_categories,
                               std::span<const std::string> pool, double ratio,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradProbe {
  double value = 0;
  std::uint64_t branch = 0;
};

using Objective = std::function<GradProbe(std::span<const double>)>;

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t checked = 0;
  std::vector<std::size_t> skipped;  // coordinates where p +/- eps changes branch
};

/// |a - n| / max(|a|, |n|); absolute difference when both are below 1e-8.
double relative_error(double analytic, double numeric);

/// Central differences on `coords` (all coordinates if empty) compared with
/// `analytic`. eps must lie in [1e-7, 1e-4].
GradCheckReport grad_check(const Objective& f, std::span<const double> params,
                           std::span<const double> analytic, double eps,
                           std::span<const std::size_t> coords = {});

// ---------------------------------------------------------------------------
// Fixed-AP evaluation

struct EvalObject {
  std::string category;
  Box box;  // normalized cxcywh
};

struct EvalImage {
  std::string id;
  std::vector<EvalObject> objects;
};

struct EvalDetection {
  std::string image_id;
  std::string category;
  double score = 0;
  Box box;
};

struct EvalConfig {
  std::vector<double> iou_thresholds = default_thresholds();
  std::size_t per_class_cap = 10000;
  std::size_t recall_points = 101;

  static std::vector<double> default_thresholds();
  void validate() const;
};

struct ApReport {
  std::map<std::string, double> per_class;
  double mean_ap = 0;
};

/// Per class: pool detections over the dataset, keep the top per_class_cap
/// by score (ties by input order), greedily match at each IoU threshold,
/// interpolate precision at recall_points. Averaged over thresholds then
/// over classes that have ground truth.
ApReport evaluate_fixed_ap(std::span<const EvalImage> images,
                           std::span<const EvalDetection> detections, const EvalConfig& cfg = {});

}  // namespace gde
