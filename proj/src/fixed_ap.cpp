// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "gde/train_eval.hpp"

namespace gde {

std::vector<double> EvalConfig::default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw ValidationError("eval: no IoU thresholds");
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("eval: IoU threshold outside (0,1]");
    if (i > 0 && !(t > iou_thresholds[i - 1]))
      throw ValidationError("eval: IoU thresholds must be strictly increasing");
  }
  if (recall_points < 2) throw ValidationError("eval: need at least two recall points");
}

namespace {

// Interpolated AP for one class at one IoU threshold.
double average_precision(const std::vector<const EvalDetection*>& dets,
                         const std::unordered_map<std::string, std::vector<Box>>& gts,
                         std::size_t npos, double threshold, std::size_t recall_points) {
  std::unordered_map<std::string, std::vector<char>> claimed;
  for (const auto& [img, boxes] : gts) claimed[img].assign(boxes.size(), 0);

  std::vector<double> precision, recall;
  precision.reserve(dets.size());
  recall.reserve(dets.size());
  std::size_t tp = 0, fp = 0;
  for (const EvalDetection* d : dets) {
    bool hit = false;
    auto it = gts.find(d->image_id);
    if (it != gts.end()) {
      auto& used = claimed[d->image_id];
      double best = -1.0;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < it->second.size(); ++j) {
        if (used[j]) continue;
        const double iou = box_iou(d->box, it->second[j]);
        if (iou >= threshold && iou > best) {
          best = iou;
          best_j = j;
        }
      }
      if (best >= 0.0) {
        used[best_j] = 1;
        hit = true;
      }
    }
    hit ? ++tp : ++fp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0;
  for (std::size_t r = 0; r < recall_points; ++r) {
    const double level = static_cast<double>(r) / static_cast<double>(recall_points - 1);
    const auto pos = std::lower_bound(recall.begin(), recall.end(), level);
    if (pos != recall.end()) sum += precision[static_cast<std::size_t>(pos - recall.begin())];
  }
  return sum / static_cast<double>(recall_points);
}

}  // namespace

ApReport evaluate_fixed_ap(std::span<const EvalImage> images,
                           std::span<const EvalDetection> detections, const EvalConfig& cfg) {
  cfg.validate();
  std::set<std::string> known;
  std::map<std::string, std::unordered_map<std::string, std::vector<Box>>> gt_by_class;
  std::map<std::string, std::size_t> npos;
  for (const auto& img : images) {
    known.insert(img.id);
    for (const auto& obj : img.objects) {
      gt_by_class[obj.category][img.id].push_back(obj.box);
      ++npos[obj.category];
    }
  }

  std::map<std::string, std::vector<const EvalDetection*>> det_by_class;
  for (const auto& d : detections) {
    if (known.count(d.image_id) == 0) {
      throw ValidationError("eval: detection references unknown image id '" + d.image_id + "'");
    }
    det_by_class[d.category].push_back(&d);
  }

  ApReport report;
  for (const auto& [category, gts] : gt_by_class) {
    auto dets = det_by_class[category];
    std::stable_sort(dets.begin(), dets.end(), [](const EvalDetection* a, const EvalDetection* b) {
      return a->score > b->score;
    });
    if (dets.size() > cfg.per_class_cap) dets.resize(cfg.per_class_cap);
    double ap = 0;
    for (double t : cfg.iou_thresholds) {
      ap += average_precision(dets, gts, npos[category], t, cfg.recall_points);
    }
    report.per_class[category] = ap / static_cast<double>(cfg.iou_thresholds.size());
  }
  double sum = 0;
  for (const auto& [_, ap] : report.per_class) sum += ap;
  report.mean_ap = report.per_class.empty() ? 0.0 : sum / static_cast<double>(report.per_class.size());
  return report;
}

}  // namespace gde
