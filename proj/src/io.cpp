// SPDX-License-Identifier: Apache-2.0
#include "gde/io.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include "gde/errors.hpp"
#include "json.hpp"

namespace gde {

namespace {

using nlohmann::json;

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t ppm_number(std::istream& in, const std::string& path) {
  const std::string tok = ppm_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw ValidationError("ppm '" + path + "': malformed header");
  }
  return std::stoul(tok);
}

std::string id_string(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw ValidationError("dataset: image id must be a string or integer");
}

}  // namespace

RawImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::io, "cannot open image '" + path.string() + "'");
  if (ppm_token(in) != "P6") {
    throw ValidationError("ppm '" + path.string() + "': only binary P6 is supported");
  }
  RawImage img;
  img.width = ppm_number(in, path.string());
  img.height = ppm_number(in, path.string());
  const std::size_t maxval = ppm_number(in, path.string());
  if (maxval != 255) throw ValidationError("ppm '" + path.string() + "': maxval must be 255");
  img.rgb.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.rgb.size()) {
    throw ValidationError("ppm '" + path.string() + "': truncated pixel data");
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const RawImage& img) {
  if (img.rgb.size() != img.width * img.height * 3) {
    throw DimensionError("write_ppm: pixel buffer does not match " + std::to_string(img.width) +
                         "x" + std::to_string(img.height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(LoadErrorKind::io, "cannot write image '" + path.string() + "'");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadErrorKind::io, "cannot open dataset '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("dataset '" + path.string() + "': " + e.what());
  }
  const auto base = path.parent_path();
  Dataset ds;
  try {
    for (const auto& im : j.at("images")) {
      DatasetImage di;
      di.id = id_string(im.at("id"));
      di.file = base / im.at("file").get<std::string>();
      di.width = im.at("width").get<std::size_t>();
      di.height = im.at("height").get<std::size_t>();
      ds.images.push_back(std::move(di));
    }
    for (const auto& a : j.value("annotations", json::array())) {
      DatasetAnnotation da;
      da.image_id = id_string(a.at("image_id"));
      const auto& b = a.at("bbox");
      if (!b.is_array() || b.size() != 4) throw ValidationError("dataset: bbox must have 4 numbers");
      for (std::size_t i = 0; i < 4; ++i) da.bbox[i] = b[i].get<double>();
      da.category = a.at("category").get<std::string>();
      ds.annotations.push_back(std::move(da));
    }
    for (const auto& c : j.at("categories")) ds.categories.push_back(c.get<std::string>());
  } catch (const json::exception& e) {
    throw ValidationError("dataset '" + path.string() + "': " + e.what());
  }
  if (ds.categories.empty()) throw ValidationError("dataset '" + path.string() + "': no categories");
  return ds;
}

std::vector<DetectionRecord> to_records(const DetectionSet& det, const Image& img,
                                        const std::vector<std::string>& categories,
                                        const std::string& image_id) {
  const double canvas = static_cast<double>(img.size());
  const double sw = static_cast<double>(img.source_width);
  const double sh = static_cast<double>(img.source_height);
  std::vector<DetectionRecord> out;
  for (std::size_t i = 0; i < det.size(); ++i) {
    if (det.labels[i] >= categories.size()) {
      throw ValidationError("to_records: label " + std::to_string(det.labels[i]) + " has no category");
    }
    const double cx = det.boxes(i, 0) * canvas / img.scale;
    const double cy = det.boxes(i, 1) * canvas / img.scale;
    const double w = det.boxes(i, 2) * canvas / img.scale;
    const double h = det.boxes(i, 3) * canvas / img.scale;
    const double x1 = std::clamp(cx - w / 2, 0.0, sw), x2 = std::clamp(cx + w / 2, 0.0, sw);
    const double y1 = std::clamp(cy - h / 2, 0.0, sh), y2 = std::clamp(cy + h / 2, 0.0, sh);
    out.push_back({image_id, categories[det.labels[i]], det.scores[i], {x1, y1, x2 - x1, y2 - y1}});
  }
  return out;
}

std::string to_jsonl(const DetectionRecord& r) {
  json j;
  j["image_id"] = r.image_id;
  j["category"] = r.category;
  j["score"] = r.score;
  j["bbox"] = r.bbox;
  return j.dump();
}

DetectionRecord parse_detection_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    DetectionRecord r;
    r.image_id = id_string(j.at("image_id"));
    r.category = j.at("category").get<std::string>();
    r.score = j.at("score").get<double>();
    const auto& b = j.at("bbox");
    if (!b.is_array() || b.size() != 4) throw ValidationError("detection: bbox must have 4 numbers");
    for (std::size_t i = 0; i < 4; ++i) r.bbox[i] = b[i].get<double>();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("detection line: ") + e.what());
  }
}

Box normalized_box(const std::array<double, 4>& xywh, std::size_t width, std::size_t height) {
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  return {(xywh[0] + xywh[2] / 2) / w, (xywh[1] + xywh[3] / 2) / h, xywh[2] / w, xywh[3] / h};
}

std::size_t eval_thread_count(std::size_t requested) {
  std::size_t n = std::max<std::size_t>(requested, 1);
  if (const char* env = std::getenv("GDE_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && cap > 0) n = std::min<std::size_t>(n, cap);
  }
  return n;
}

EvalRun run_zero_shot_eval(const Dataset& ds, const WeightStore& ws, const ModelConfig& cfg,
                           const EvalOptions& opts) {
  std::vector<std::string> phrases;
  for (const auto& c : ds.categories) {
    auto it = opts.prompt_refinement.find(c);
    phrases.push_back(it == opts.prompt_refinement.end() ? c : it->second);
  }
  const Prompt prompt = assemble_prompt(phrases);

  std::vector<std::vector<DetectionRecord>> per_image(ds.images.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(ds.images.size());
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < ds.images.size();) {
      try {
        const auto& di = ds.images[i];
        const Image img = preprocess_image(read_ppm(di.file), cfg.image_size);
        const DetectionSet det = run_model(img, prompt, ws, cfg).detections;
        per_image[i] = to_records(det, img, ds.categories, di.id);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t threads = std::min(eval_thread_count(opts.threads), std::max<std::size_t>(ds.images.size(), 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ValidationError("eval: " + e);
  }

  EvalRun run;
  std::map<std::string, std::size_t> index;
  std::vector<EvalImage> gt;
  for (const auto& di : ds.images) {
    index[di.id] = gt.size();
    gt.push_back({di.id, {}});
  }
  for (const auto& a : ds.annotations) {
    auto it = index.find(a.image_id);
    if (it == index.end()) throw ValidationError("dataset: annotation for unknown image '" + a.image_id + "'");
    const auto& di = ds.images[it->second];
    gt[it->second].objects.push_back({a.category, normalized_box(a.bbox, di.width, di.height)});
  }
  std::vector<EvalDetection> dets;
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    const auto& di = ds.images[i];
    for (auto& r : per_image[i]) {
      dets.push_back({r.image_id, r.category, r.score, normalized_box(r.bbox, di.width, di.height)});
      run.detections.push_back(std::move(r));
    }
  }
  EvalConfig ec;
  ec.per_class_cap = opts.fixed_cap;
  run.ap = evaluate_fixed_ap(gt, dets, ec);
  return run;
}

}  // namespace gde
