// SPDX-License-Identifier: Apache-2.0
#include "gde/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "gde/bench.hpp"
#include "gde/errors.hpp"
#include "gde/head.hpp"
#include "gde/io.hpp"
#include "json.hpp"

namespace gde {

namespace {

struct Globals {
  std::string config;
  std::string weights = "weights.gde";
  std::uint64_t seed = 0;
};

ModelConfig load_config(const std::string& spec) {
  if (spec.empty()) return ModelConfig{};
  if (spec.front() == '{') return config_from_json(spec);
  std::ifstream in(spec);
  if (!in) throw ConfigError("cannot open config file '" + spec + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

WeightStore load_checked(const std::string& path, const ModelConfig& cfg) {
  WeightStore ws = load_weights(path);
  if (ws.config_digest != config_digest(cfg)) {
    throw ConfigError("weights file '" + path + "' was built for a different model config (digest " +
                      ws.config_digest + ", expected " + config_digest(cfg) + ")");
  }
  return ws;
}

std::vector<EnhancerVariant> variants_for(const std::string& v) {
  if (v == "both") return {EnhancerVariant::original, EnhancerVariant::efficient};
  return {parse_variant(v)};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Open-set detector toolkit: weights, inference, cost accounting, evaluation", "gde"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  Globals g;
  app.add_option("--config", g.config, "Model config: JSON file path or inline JSON object");
  app.add_option("--weights", g.weights, "Weight file path")->capture_default_str();
  app.add_option("--seed", g.seed, "Seed for initialization and synthetic inputs");

  auto* init = app.add_subcommand("init-weights", "Write freshly initialized weights");

  auto* infer = app.add_subcommand("infer", "Detect prompted objects in a PPM image");
  std::string image_path, prompt_text, infer_variant = "efficient", infer_out;
  float threshold = 0.0f;
  infer->add_option("--image", image_path, "Input image (binary PPM)")->required();
  infer->add_option("--prompt", prompt_text, "Categories separated by periods")->required();
  infer->add_option("--threshold", threshold, "Score threshold in [0,1]");
  infer->add_option("--variant", infer_variant, "Feature enhancer")
      ->check(CLI::IsMember({"original", "efficient"}));
  infer->add_option("--out", infer_out, "Write JSONL here instead of stdout");

  auto* bench = app.add_subcommand("bench", "Time full inference");
  std::size_t bench_size = 640, runs = 20, warmup = 5;
  std::string bench_variant = "both";
  bench->add_option("--size", bench_size, "Input size")->capture_default_str();
  bench->add_option("--runs", runs, "Measured runs (>= 10)")->capture_default_str();
  bench->add_option("--warmup", warmup, "Warmup runs (>= 3)")->capture_default_str();
  bench->add_option("--variant", bench_variant, "original, efficient or both")
      ->check(CLI::IsMember({"original", "efficient", "both"}));

  auto* flops_cmd = app.add_subcommand("flops", "Count FLOPs per stage");
  std::size_t flops_size = 640;
  std::string flops_variant = "both";
  flops_cmd->add_option("--size", flops_size, "Input size")->capture_default_str();
  flops_cmd->add_option("--variant", flops_variant, "original, efficient or both")
      ->check(CLI::IsMember({"original", "efficient", "both"}));

  auto* tokens = app.add_subcommand("tokens", "Count encoder tokens per pyramid level");
  std::size_t tokens_size = 640;
  tokens->add_option("--size", tokens_size, "Input size")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Zero-shot fixed-AP evaluation on a dataset");
  std::string dataset_path, eval_out, refine_path;
  std::size_t fixed_cap = 10000, threads = 1;
  eval->add_option("--dataset", dataset_path, "Dataset JSON")->required();
  eval->add_option("--out", eval_out, "Detections JSONL output")->required();
  eval->add_option("--fixed-cap", fixed_cap, "Per-class detection cap")->capture_default_str();
  eval->add_option("--threads", threads, "Parallel images (capped by GDE_THREADS)")->capture_default_str();
  eval->add_option("--refine", refine_path, "JSON map of category -> prompt phrase");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    ModelConfig cfg = load_config(g.config);

    if (*init) {
      const WeightStore ws = init_weights(cfg, g.seed);
      save_weights(ws, g.weights);
      out << "wrote " << ws.parameter_count() << " parameters in " << ws.tensors().size()
          << " tensors to " << g.weights << " (seed " << g.seed << ")\n";
      return 0;
    }

    if (*tokens) {
      const TokenCount tc = count_tokens(tokens_size, kPyramidStrides);
      for (std::size_t i = 0; i < tc.per_level.size(); ++i) {
        out << "P" << (i + 3) << " stride " << kPyramidStrides[i] << ": " << tc.per_level[i] << "\n";
      }
      out << "total " << tc.total << "\n";
      out << "ratio " << tc.p5_ratio << "\n";
      return 0;
    }

    if (*infer) {
      cfg.enhancer.variant = parse_variant(infer_variant);
      if (infer->count("--threshold")) cfg.head.threshold = threshold;
      const WeightStore ws = load_checked(g.weights, cfg);
      const RawImage raw = read_ppm(image_path);
      const Prompt prompt = parse_category_text(prompt_text);
      const Image img = preprocess_image(raw, cfg.image_size);
      const DetectionSet det = run_model(img, prompt, ws, cfg).detections;
      const std::string id = std::filesystem::path(image_path).stem().string();
      std::ofstream file;
      if (!infer_out.empty()) {
        file.open(infer_out);
        if (!file) throw LoadError(LoadErrorKind::io, "cannot write '" + infer_out + "'");
      }
      std::ostream& sink = infer_out.empty() ? out : file;
      for (const auto& r : to_records(det, img, prompt.phrases, id)) sink << to_jsonl(r) << "\n";
      return 0;
    }

    if (*bench || *flops_cmd) {
      const bool timing = static_cast<bool>(*bench);
      cfg.image_size = timing ? bench_size : flops_size;
      const WeightStore ws = app.count("--weights") ? load_checked(g.weights, cfg) : init_weights(cfg, g.seed);
      if (timing) out << bench_csv_header() << "\n";
      std::vector<FlopReport> reports;
      for (EnhancerVariant v : variants_for(timing ? bench_variant : flops_variant)) {
        cfg.enhancer.variant = v;
        cfg.validate();
        if (timing) {
          out << bench_csv_row(run_latency_bench(cfg, ws, warmup, runs, g.seed)) << "\n";
          continue;
        }
        const FlopReport r = count_flops(cfg, ws, g.seed);
        out << to_string(v) << " @ " << r.input_size << "\n";
        for (const auto& [stage, n] : r.stages) out << "  " << stage << ": " << n << "\n";
        out << "  enhancer: " << r.enhancer() << "\n  total: " << r.total << "\n";
        reports.push_back(r);
      }
      if (reports.size() == 2 && reports[1].enhancer() > 0) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3f",
                      static_cast<double>(reports[0].enhancer()) / static_cast<double>(reports[1].enhancer()));
        out << "enhancer ratio original/efficient: " << buf << "\n";
      }
      return 0;
    }

    if (*eval) {
      const WeightStore ws = load_checked(g.weights, cfg);
      const Dataset ds = load_dataset(dataset_path);
      EvalOptions opts;
      opts.fixed_cap = fixed_cap;
      opts.threads = threads;
      if (!refine_path.empty()) {
        std::ifstream in(refine_path);
        if (!in) throw LoadError(LoadErrorKind::io, "cannot open refinement map '" + refine_path + "'");
        try {
          opts.prompt_refinement = nlohmann::json::parse(in).get<std::map<std::string, std::string>>();
        } catch (const nlohmann::json::exception& e) {
          throw ValidationError("refinement map '" + refine_path + "': " + e.what());
        }
      }
      const EvalRun run = run_zero_shot_eval(ds, ws, cfg, opts);
      std::ofstream file(eval_out);
      if (!file) throw LoadError(LoadErrorKind::io, "cannot write '" + eval_out + "'");
      for (const auto& r : run.detections) file << to_jsonl(r) << "\n";
      for (const auto& [cls, ap] : run.ap.per_class) out << cls << " AP " << ap << "\n";
      out << "mAP " << run.ap.mean_ap << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace gde
