// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gde/backbone.hpp"
#include "gde/config.hpp"
#include "gde/head.hpp"
#include "gde/text.hpp"
#include "gde/train_eval.hpp"
#include "gde/weights.hpp"

namespace gde {

/// Binary PPM (P6, maxval 255). Comments in the header are skipped.
RawImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RawImage& img);

struct DatasetImage {
  std::string id;
  std::filesystem::path file;  // resolved against the dataset file's directory
  std::size_t width = 0;
  std::size_t height = 0;
};

struct DatasetAnnotation {
  std::string image_id;
  std::array<double, 4> bbox{};  // x, y, w, h in source pixels
  std::string category;
};

struct Dataset {
  std::vector<DatasetImage> images;
  std::vector<DatasetAnnotation> annotations;
  std::vector<std::string> categories;
};

/// Numeric and string image ids are both accepted and kept as strings.
Dataset load_dataset(const std::filesystem::path& path);

struct DetectionRecord {
  std::string image_id;
  std::string category;
  double score = 0;
  std::array<double, 4> bbox{};  // x, y, w, h in source pixels
};

/// Maps canvas-normalized detections back to source pixels, clipped to the
/// source image. `categories[label]` names each detection.
std::vector<DetectionRecord> to_records(const DetectionSet& det, const Image& img,
                                        const std::vector<std::string>& categories,
                                        const std::string& image_id);

std::string to_jsonl(const DetectionRecord& r);
DetectionRecord parse_detection_line(const std::string& line);

/// Box in source pixels -> normalized cxcywh over the source extent.
Box normalized_box(const std::array<double, 4>& xywh, std::size_t width, std::size_t height);

struct EvalOptions {
  std::size_t fixed_cap = 10000;
  std::size_t threads = 1;
  /// Category -> prompt phrase substitutions; detections keep the category.
  std::map<std::string, std::string> prompt_refinement;
};

struct EvalRun {
  std::vector<DetectionRecord> detections;  // dataset image order
  ApReport ap;
};

/// Effective worker count: `requested`, further capped by GDE_THREADS.
std::size_t eval_thread_count(std::size_t requested);

/// Prompts every image with all dataset categories, predicts, and scores
/// with the fixed-AP evaluator. Output is independent of the thread count.
EvalRun run_zero_shot_eval(const Dataset& ds, const WeightStore& ws, const ModelConfig& cfg,
                           const EvalOptions& opts);

}  // namespace gde
