// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "gde/hash.hpp"
#include "gde/train_eval.hpp"

namespace gde {

namespace {

struct Extent {
  double x1, y1, x2, y2;
};

Extent extent(const Box& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

void require_positive(const Box& b) {
  if (!(b.w > 0) || !(b.h > 0)) {
    throw ValidationError("giou: box width and height must be positive (got " +
                          std::to_string(b.w) + "x" + std::to_string(b.h) + ")");
  }
}

std::uint64_t fold(std::uint64_t h, std::uint64_t v) { return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct FocalTerms {
  double pos, neg, d_pos, d_neg;
};

// Sigmoid focal loss for target 1 (pos) and target 0 (neg) with derivatives
// with respect to the logit.
FocalTerms focal(double x, double alpha, double gamma) {
  const double p = sigmoid(x);
  const double q = 1.0 - p;
  const double sp_neg = softplus(-x);  // -log p
  const double sp_pos = softplus(x);   // -log(1-p)
  const double qg = std::pow(q, gamma);
  const double pg = std::pow(p, gamma);
  return {alpha * qg * sp_neg, (1 - alpha) * pg * sp_pos,
          alpha * qg * (-gamma * p * sp_neg - q), (1 - alpha) * pg * (gamma * q * sp_pos + p)};
}

Box box_row(const TensorD& t, std::size_t i) { return {t(i, 0), t(i, 1), t(i, 2), t(i, 3)}; }

}  // namespace

double box_iou(const Box& a, const Box& b) {
  const Extent ea = extent(a), eb = extent(b);
  const double iw = std::max(0.0, std::min(ea.x2, eb.x2) - std::max(ea.x1, eb.x1));
  const double ih = std::max(0.0, std::min(ea.y2, eb.y2) - std::max(ea.y1, eb.y1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double generalized_iou(const Box& a, const Box& b) { return generalized_iou_gradient(a, b).value; }

GiouGradient generalized_iou_gradient(const Box& a, const Box& b) {
  require_positive(a);
  require_positive(b);
  const Extent ea = extent(a), eb = extent(b);

  // Intersection sides and their dependence on a's edges.
  const bool ix1_a = ea.x1 > eb.x1, ix2_a = ea.x2 < eb.x2;
  const bool iy1_a = ea.y1 > eb.y1, iy2_a = ea.y2 < eb.y2;
  const double iw_raw = (ix2_a ? ea.x2 : eb.x2) - (ix1_a ? ea.x1 : eb.x1);
  const double ih_raw = (iy2_a ? ea.y2 : eb.y2) - (iy1_a ? ea.y1 : eb.y1);
  const bool iw_pos = iw_raw > 0, ih_pos = ih_raw > 0;
  const double iw = iw_pos ? iw_raw : 0.0, ih = ih_pos ? ih_raw : 0.0;

  // Enclosure sides.
  const bool ex1_a = ea.x1 < eb.x1, ex2_a = ea.x2 > eb.x2;
  const bool ey1_a = ea.y1 < eb.y1, ey2_a = ea.y2 > eb.y2;
  const double ew = (ex2_a ? ea.x2 : eb.x2) - (ex1_a ? ea.x1 : eb.x1);
  const double eh = (ey2_a ? ea.y2 : eb.y2) - (ey1_a ? ea.y1 : eb.y1);

  const double aw = ea.x2 - ea.x1, ah = ea.y2 - ea.y1;
  const double inter = iw * ih;
  const double area_a = aw * ah;
  const double uni = area_a + b.w * b.h - inter;
  const double encl = ew * eh;
  const double iou = inter / uni;

  GiouGradient g;
  g.value = iou - (encl - uni) / encl;

  // Edge derivatives in order x1, x2, y1, y2.
  const double d_iw[4] = {(iw_pos && ix1_a) ? -1.0 : 0.0, (iw_pos && ix2_a) ? 1.0 : 0.0, 0, 0};
  const double d_ih[4] = {0, 0, (ih_pos && iy1_a) ? -1.0 : 0.0, (ih_pos && iy2_a) ? 1.0 : 0.0};
  const double d_ew[4] = {ex1_a ? -1.0 : 0.0, ex2_a ? 1.0 : 0.0, 0, 0};
  const double d_eh[4] = {0, 0, ey1_a ? -1.0 : 0.0, ey2_a ? 1.0 : 0.0};
  const double d_area[4] = {-ah, ah, -aw, aw};
  double d_edge[4];
  for (int e = 0; e < 4; ++e) {
    const double di = d_iw[e] * ih + iw * d_ih[e];
    const double du = d_area[e] - di;
    const double dc = d_ew[e] * eh + ew * d_eh[e];
    const double d_iou = (di * uni - inter * du) / (uni * uni);
    // giou = iou - 1 + uni / encl
    d_edge[e] = d_iou + (du * encl - uni * dc) / (encl * encl);
  }
  g.d_a = {d_edge[0] + d_edge[1], d_edge[2] + d_edge[3], 0.5 * (d_edge[1] - d_edge[0]),
           0.5 * (d_edge[3] - d_edge[2])};
  const bool bits[10] = {ix1_a, ix2_a, iy1_a, iy2_a, iw_pos, ih_pos, ex1_a, ex2_a, ey1_a, ey2_a};
  for (int i = 0; i < 10; ++i) g.branch |= static_cast<std::uint64_t>(bits[i]) << i;
  return g;
}

MatchResult hungarian_match(const TensorD& cost) {
  MatchResult result;
  if (cost.rank() != 2) throw DimensionError("hungarian: cost must be a matrix");
  const std::size_t k = cost.dim(0), g = cost.dim(1);
  if (k == 0 || g == 0) return result;
  for (double c : cost.data())
    if (!std::isfinite(c)) throw ValidationError("hungarian: cost matrix has non-finite entries");

  // Rows are the smaller side.
  const bool transposed = k > g;
  const std::size_t n = transposed ? g : k;
  const std::size_t m = transposed ? k : g;
  auto at = [&](std::size_t i, std::size_t j) { return transposed ? cost(j, i) : cost(i, j); };

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t row = p[j] - 1, col = j - 1;
    result.pairs.push_back(transposed ? MatchPair{col, row} : MatchPair{row, col});
  }
  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const MatchPair& a, const MatchPair& b) { return a.query < b.query; });
  for (const auto& pr : result.pairs) result.total_cost += cost(pr.query, pr.target);
  return result;
}

namespace {

void check_loss_inputs(const TensorD& logits, const TensorD& boxes, const GroundTruth& gt) {
  if (logits.rank() != 2 || boxes.rank() != 2 || boxes.dim(1) != 4 ||
      boxes.dim(0) != logits.dim(0)) {
    throw DimensionError("detection loss: logits " + shape_string(logits.shape()) +
                         " and boxes " + shape_string(boxes.shape()));
  }
  if (gt.boxes.rank() != 2 || gt.boxes.dim(0) != gt.labels.size() || gt.boxes.dim(1) != 4) {
    throw DimensionError("detection loss: ground truth boxes " + shape_string(gt.boxes.shape()) +
                         " for " + std::to_string(gt.labels.size()) + " labels");
  }
  for (std::size_t label : gt.labels) {
    if (label >= logits.dim(1)) {
      throw ValidationError("detection loss: label " + std::to_string(label) + " out of range for " +
                            std::to_string(logits.dim(1)) + " phrases");
    }
  }
}

}  // namespace

TensorD matching_cost(const TensorD& logits, const TensorD& boxes, const GroundTruth& gt,
                      const LossWeights& w) {
  check_loss_inputs(logits, boxes, gt);
  const std::size_t k = logits.dim(0), g = gt.size();
  TensorD cost({k, g});
  for (std::size_t i = 0; i < k; ++i) {
    const Box pb = box_row(boxes, i);
    for (std::size_t j = 0; j < g; ++j) {
      const FocalTerms f = focal(logits(i, gt.labels[j]), w.focal_alpha, w.focal_gamma);
      const Box gb = box_row(gt.boxes, j);
      const double l1 = std::abs(pb.cx - gb.cx) + std::abs(pb.cy - gb.cy) +
                        std::abs(pb.w - gb.w) + std::abs(pb.h - gb.h);
      cost(i, j) = w.cls * (f.pos - f.neg) + w.l1 * l1 + w.giou * (1.0 - generalized_iou(pb, gb));
    }
  }
  return cost;
}

LossEvaluation detection_loss_with_grad(const TensorD& logits, const TensorD& boxes,
                                        const GroundTruth& gt, const LossWeights& w) {
  check_loss_inputs(logits, boxes, gt);
  const std::size_t k = logits.dim(0), phrases = logits.dim(1), g = gt.size();
  const double norm = static_cast<double>(std::max<std::size_t>(g, 1));

  LossEvaluation ev;
  ev.d_logits = TensorD({k, phrases});
  ev.d_boxes = TensorD({k, 4});
  ev.match = hungarian_match(matching_cost(logits, boxes, gt, w));

  std::vector<std::size_t> positive(k, phrases);  // phrase index, or `phrases` for none
  std::uint64_t branch = 0;
  for (const auto& pr : ev.match.pairs) {
    positive[pr.query] = gt.labels[pr.target];
    branch = fold(branch, pr.query * 1000003ULL + pr.target);
  }

  double cls = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < phrases; ++j) {
      const FocalTerms f = focal(logits(i, j), w.focal_alpha, w.focal_gamma);
      const bool pos = positive[i] == j;
      cls += pos ? f.pos : f.neg;
      ev.d_logits(i, j) = w.cls * (pos ? f.d_pos : f.d_neg) / norm;
    }
  }

  double l1 = 0, giou = 0;
  for (const auto& pr : ev.match.pairs) {
    const Box pb = box_row(boxes, pr.query);
    const Box gb = box_row(gt.boxes, pr.target);
    for (std::size_t c = 0; c < 4; ++c) {
      const double diff = boxes(pr.query, c) - gt.boxes(pr.target, c);
      l1 += std::abs(diff);
      const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      ev.d_boxes(pr.query, c) += w.l1 * sign / norm;
      branch = fold(branch, diff > 0 ? 1 : (diff < 0 ? 2 : 3));
    }
    const GiouGradient gg = generalized_iou_gradient(pb, gb);
    giou += 1.0 - gg.value;
    for (std::size_t c = 0; c < 4; ++c) ev.d_boxes(pr.query, c) -= w.giou * gg.d_a[c] / norm;
    branch = fold(branch, gg.branch);
  }

  ev.loss.cls = cls / norm;
  ev.loss.l1 = l1 / norm;
  ev.loss.giou = giou / norm;
  ev.loss.total = w.cls * ev.loss.cls + w.l1 * ev.loss.l1 + w.giou * ev.loss.giou;
  ev.branch = branch;
  return ev;
}

LossBreakdown detection_loss(const TensorD& logits, const TensorD& boxes, const GroundTruth& gt,
                             const LossWeights& w) {
  return detection_loss_with_grad(logits, boxes, gt, w).loss;
}

Prompt sample_negative_prompts(std::span<const std::string> gt_categories,
                               std::span<const std::string> pool, double ratio,
                               std::uint64_t seed) {
  if (!(ratio >= 0.0) || !std::isfinite(ratio)) {
    throw ValidationError("negative sampling: ratio must be finite and >= 0");
  }
  const std::set<std::string> gt_set(gt_categories.begin(), gt_categories.end());
  std::vector<std::string> candidates;
  std::set<std::string> seen;
  for (const auto& c : pool) {
    if (gt_set.count(c) == 0 && seen.insert(c).second) candidates.push_back(c);
  }
  // Tolerance keeps products like 0.1 * 30 from rounding up an extra draw.
  const auto extra = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(gt_categories.size()) - 1e-9));
  if (extra > candidates.size()) {
    throw ValidationError("negative sampling: pool has " + std::to_string(candidates.size()) +
                          " negatives, " + std::to_string(extra) + " requested");
  }

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < extra; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  std::vector<std::string> phrases(gt_categories.begin(), gt_categories.end());
  phrases.insert(phrases.end(), candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(extra));
  for (std::size_t i = phrases.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(phrases[i - 1], phrases[j]);
  }
  return assemble_prompt(phrases);
}

double relative_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale < 1e-8 ? diff : diff / scale;
}

GradCheckReport grad_check(const Objective& f, std::span<const double> params,
                           std::span<const double> analytic, double eps,
                           std::span<const std::size_t> coords) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw ValidationError("grad_check: eps must be in [1e-7, 1e-4]");
  if (analytic.size() != params.size()) {
    throw DimensionError("grad_check: analytic gradient has " + std::to_string(analytic.size()) +
                         " entries for " + std::to_string(params.size()) + " parameters");
  }
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }
  std::vector<double> p(params.begin(), params.end());
  const std::uint64_t base = f(p).branch;

  GradCheckReport report;
  for (std::size_t i : coords) {
    if (i >= p.size()) throw ValidationError("grad_check: coordinate out of range");
    const double x = p[i];
    p[i] = x + eps;
    const GradProbe plus = f(p);
    p[i] = x - eps;
    const GradProbe minus = f(p);
    p[i] = x;
    if (plus.branch != base || minus.branch != base) {
      report.skipped.push_back(i);
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2 * eps);
    report.max_relative_error = std::max(report.max_relative_error, relative_error(analytic[i], numeric));
    ++report.checked;
  }
  return report;
}

}  // namespace gde
