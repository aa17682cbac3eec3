// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "gde/bench.hpp"
#include "gde/cli.hpp"
#include "gde/config.hpp"
#include "gde/errors.hpp"
#include "gde/head.hpp"
#include "gde/io.hpp"
#include "gde/train_eval.hpp"
#include "gde/weights.hpp"

namespace py = pybind11;
using namespace gde;

namespace {

Box to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "gde detector core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("from_json", [](const std::string& s) { return config_from_json(s); })
      .def("to_json", [](const ModelConfig& c) { return config_to_json(c); })
      .def("digest", [](const ModelConfig& c) { return config_digest(c); })
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("image_size", &ModelConfig::image_size)
      .def_property(
          "variant", [](const ModelConfig& c) { return std::string(to_string(c.enhancer.variant)); },
          [](ModelConfig& c, const std::string& v) { c.enhancer.variant = parse_variant(v); })
      .def_property(
          "threshold", [](const ModelConfig& c) { return c.head.threshold; },
          [](ModelConfig& c, float t) { c.head.threshold = t; });

  py::class_<WeightStore>(m, "WeightStore")
      .def_readonly("seed", &WeightStore::seed)
      .def_readonly("config_digest", &WeightStore::config_digest)
      .def("parameter_count", &WeightStore::parameter_count)
      .def("names", [](const WeightStore& ws) {
        std::vector<std::string> out;
        for (const auto& [name, t] : ws.tensors()) out.push_back(name);
        return out;
      })
      .def("__eq__", [](const WeightStore& a, const WeightStore& b) { return a == b; });

  m.def("init_weights", &init_weights, py::arg("config"), py::arg("seed"));
  m.def("save_weights", &save_weights, py::arg("weights"), py::arg("path"));
  m.def("load_weights", &load_weights, py::arg("path"));

  m.def("token_id", &token_id, py::arg("word"), py::arg("vocab") = 4096);

  m.def(
      "count_tokens",
      [](std::size_t size, std::vector<std::size_t> strides) {
        const TokenCount tc = count_tokens(size, strides);
        return py::dict(py::arg("per_level") = tc.per_level, py::arg("total") = tc.total,
                        py::arg("p5_ratio") = tc.p5_ratio);
      },
      py::arg("size"), py::arg("strides") = std::vector<std::size_t>{8, 16, 32});

  m.def(
      "count_flops",
      [](const ModelConfig& cfg, const WeightStore& ws, std::uint64_t seed) {
        const FlopReport r = count_flops(cfg, ws, seed);
        return py::dict(py::arg("stages") = r.stages, py::arg("enhancer") = r.enhancer(),
                        py::arg("total") = r.total);
      },
      py::arg("config"), py::arg("weights"), py::arg("seed") = 0);

  m.def(
      "predict",
      [](const std::filesystem::path& image, const std::vector<std::string>& phrases, const WeightStore& ws,
         const ModelConfig& cfg) {
        const RawImage raw = read_ppm(image);
        const Prompt prompt = assemble_prompt(phrases);
        const Image img = preprocess_image(raw, cfg.image_size);
        DetectionSet det;
        {
          py::gil_scoped_release release;
          det = run_model(img, prompt, ws, cfg).detections;
        }
        py::list out;
        for (const auto& r : to_records(det, img, prompt.phrases, image.stem().string())) {
          out.append(py::dict(py::arg("category") = r.category, py::arg("score") = r.score,
                              py::arg("bbox") = r.bbox));
        }
        return out;
      },
      py::arg("image"), py::arg("phrases"), py::arg("weights"), py::arg("config"),
      "Runs detection on a PPM image; boxes are [x, y, w, h] in source pixels.");

  m.def(
      "hungarian_match",
      [](const std::vector<std::vector<double>>& cost) {
        const std::size_t k = cost.size(), g = k ? cost[0].size() : 0;
        TensorD t({k, g});
        for (std::size_t i = 0; i < k; ++i) {
          if (cost[i].size() != g) throw ValidationError("hungarian_match: ragged cost matrix");
          for (std::size_t j = 0; j < g; ++j) t(i, j) = cost[i][j];
        }
        const MatchResult r = hungarian_match(t);
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (const auto& p : r.pairs) pairs.emplace_back(p.query, p.target);
        return py::make_tuple(pairs, r.total_cost);
      },
      py::arg("cost"), "Returns ([(query, target), ...], total_cost).");

  m.def(
      "generalized_iou",
      [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
        return generalized_iou(to_box(a), to_box(b));
      },
      py::arg("a"), py::arg("b"), "Boxes as (cx, cy, w, h).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Returns (exit_code, stdout, stderr).");
}
