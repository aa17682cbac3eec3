// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gde/bench.hpp"
#include "gde/cli.hpp"
#include "gde/errors.hpp"
#include "gde/flops.hpp"
#include "gde/io.hpp"
#include "gde/ops.hpp"
#include "support.hpp"

using namespace gde;
namespace fs = std::filesystem;

namespace {

const std::size_t kStrides[] = {8, 16, 32};

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gde_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

LoadErrorKind load_error_kind(const fs::path& p) {
  try {
    load_weights(p);
  } catch (const LoadError& e) {
    return e.kind();
  }
  FAIL("load succeeded");
  return LoadErrorKind::io;
}

}  // namespace

TEST_SUITE("token count") {
  TEST_CASE("640 with three strides") {
    const TokenCount tc = count_tokens(640, kStrides);
    CHECK(tc.per_level == std::vector<std::size_t>{6400, 1600, 400});
    CHECK(tc.total == 8400);
    CHECK(tc.p5_ratio == 21.0);
  }

  TEST_CASE("ratio is size independent") {
    const TokenCount tc = count_tokens(256, kStrides);
    CHECK(tc.per_level == std::vector<std::size_t>{1024, 256, 64});
    CHECK(tc.p5_ratio == 21.0);
    const std::size_t one[] = {32};
    CHECK(count_tokens(640, one).p5_ratio == 1.0);
  }

  TEST_CASE("stride must divide size") {
    CHECK_THROWS_AS(count_tokens(100, kStrides), ValidationError);
  }
}

TEST_SUITE("flops") {
  TEST_CASE("single matmul") {
    flops::Counter c;
    {
      flops::ScopedCounter scope(c);
      matmul(Tensor({4, 8}, 1.0f), Tensor({8, 2}, 1.0f));
    }
    CHECK(c.total() == 128);
  }

  TEST_CASE("report is deterministic and totals its stages") {
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 2);
    const FlopReport a = count_flops(cfg, ws, 1);
    const FlopReport b = count_flops(cfg, ws, 1);
    CHECK(a.stages == b.stages);
    CHECK(a.total == b.total);
    std::uint64_t sum = 0;
    for (const auto& [name, n] : a.stages) sum += n;
    CHECK(sum == a.total);
    for (const char* s : {"backbone", "text-encoder", "decoder", "heads"}) CHECK(a.stage(s) > 0);
    CHECK(a.enhancer() == a.stage("enhancer-self-attn") + a.stage("enhancer-fusion") +
                              a.stage("cross-scale-fusion"));
  }

  TEST_CASE("backbone stage equals the conv closed forms") {
    ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 2);
    const FlopReport r = count_flops(cfg, ws, 1);
    std::uint64_t expected = 0;
    // stem 4x4/4, then 3x3/2 stages, then 1x1 laterals to d_model
    const auto& ch = cfg.backbone_channels;
    std::size_t s = cfg.image_size / 4;
    expected += flops::conv(ch[0], 3, 4, 4, s, s);
    std::size_t prev_c = ch[0];
    std::vector<std::size_t> level_sizes;
    for (int i = 1; i < 4; ++i) {
      s /= 2;
      expected += flops::conv(ch[i], prev_c, 3, 3, s, s);
      prev_c = ch[i];
      level_sizes.push_back(s);
    }
    for (int i = 0; i < 3; ++i)
      expected += flops::conv(cfg.d_model, ch[i + 1], 1, 1, level_sizes[i], level_sizes[i]);
    CHECK(r.stage("backbone") == expected);
  }

  TEST_CASE("efficient enhancer is cheaper") {
    ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 2);
    cfg.enhancer.variant = EnhancerVariant::original;
    const FlopReport o = count_flops(cfg, ws, 1);
    cfg.enhancer.variant = EnhancerVariant::efficient;
    const FlopReport e = count_flops(cfg, ws, 1);
    CHECK(o.enhancer() > e.enhancer());
    CHECK(o.stage("backbone") == e.stage("backbone"));
  }
}

TEST_SUITE("latency bench") {
  TEST_CASE("report contract") {
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 2);
    const BenchReport r = run_latency_bench(cfg, ws, 3, 10, 1);
    CHECK(r.samples_ms.size() == 10);
    CHECK(r.runs == 10);
    CHECK(r.fps == doctest::Approx(1000.0 / r.median_ms));
    CHECK(r.p10_ms <= r.median_ms);
    CHECK(r.median_ms <= r.p90_ms);
  }

  TEST_CASE("preconditions") {
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 2);
    CHECK_THROWS_AS(run_latency_bench(cfg, ws, 3, 9, 1), ValidationError);
    CHECK_THROWS_AS(run_latency_bench(cfg, ws, 2, 10, 1), ValidationError);
  }

  TEST_CASE("percentile interpolates") {
    CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
    CHECK(percentile({5, 1, 3}, 0) == 1);
    CHECK(percentile({5, 1, 3}, 100) == 5);
    CHECK(percentile({0, 10}, 10) == doctest::Approx(1.0));
  }

  TEST_CASE("csv layout") {
    CHECK(bench_csv_header() == "variant,input_size,runs,median_ms,p10_ms,p90_ms,fps");
    BenchReport r;
    r.input_size = 640;
    r.runs = 20;
    const std::string row = bench_csv_row(r);
    CHECK(row.rfind("efficient,640,20,", 0) == 0);
    CHECK(std::count(row.begin(), row.end(), ',') == 6);
  }
}

TEST_SUITE("weights") {
  TEST_CASE("init is deterministic and seed-dependent") {
    const ModelConfig cfg = test::small_config();
    CHECK(init_weights(cfg, 7) == init_weights(cfg, 7));
    CHECK_FALSE(init_weights(cfg, 7) == init_weights(cfg, 8));
  }

  TEST_CASE("every weight within its Xavier bound; biases zero; gains one") {
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 11);
    for (const ParamSpec& spec : parameter_specs(cfg)) {
      CAPTURE(spec.name);
      const Tensor& t = ws.get(spec.name);
      REQUIRE(t.shape() == spec.shape);
      if (spec.kind == ParamKind::weight) {
        // Independent bound from the shape definition.
        double fan_in, fan_out;
        if (spec.shape.size() == 4) {
          const double rf = double(spec.shape[2] * spec.shape[3]);
          fan_in = double(spec.shape[1]) * rf;
          fan_out = double(spec.shape[0]) * rf;
        } else {
          fan_in = double(spec.shape[0]);
          fan_out = double(spec.shape.back());
        }
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (float v : t.data()) CHECK(std::abs(double(v)) <= bound);
      } else {
        const float expected = spec.kind == ParamKind::bias ? 0.0f : 1.0f;
        for (float v : t.data()) CHECK(v == expected);
      }
    }
  }

  TEST_CASE("adding a parameter does not perturb others") {
    ModelConfig a = test::small_config();
    ModelConfig b = a;
    b.head.decoder_layers = 3;
    const WeightStore wa = init_weights(a, 4), wb = init_weights(b, 4);
    CHECK(wa.get("backbone.stem.weight") == wb.get("backbone.stem.weight"));
    CHECK(wa.get("decoder.layer1.ffn.fc1.weight") == wb.get("decoder.layer1.ffn.fc1.weight"));
  }

  TEST_CASE("save/load roundtrip and error kinds") {
    TempDir dir;
    const ModelConfig cfg = test::small_config();
    const WeightStore ws = init_weights(cfg, 3);
    const fs::path p = dir.path / "w.gde";
    save_weights(ws, p);
    CHECK(load_weights(p) == ws);
    const auto bytes = read_bytes(p);
    CHECK(serialize_weights(load_weights(p)) == bytes);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GDE1");

    auto bad = bytes;
    bad[0] = 'X';
    write_bytes(dir.path / "magic.gde", bad);
    CHECK(load_error_kind(dir.path / "magic.gde") == LoadErrorKind::magic);

    bad = bytes;
    bad[4] = 2;
    write_bytes(dir.path / "version.gde", bad);
    CHECK(load_error_kind(dir.path / "version.gde") == LoadErrorKind::version);

    bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
    write_bytes(dir.path / "trunc.gde", bad);
    CHECK(load_error_kind(dir.path / "trunc.gde") == LoadErrorKind::truncated);

    bad = bytes;
    bad[bytes.size() - 10] ^= 0x40;
    write_bytes(dir.path / "crc.gde", bad);
    CHECK(load_error_kind(dir.path / "crc.gde") == LoadErrorKind::checksum);

    CHECK(load_error_kind(dir.path / "missing.gde") == LoadErrorKind::io);
  }
}

TEST_SUITE("io") {
  TEST_CASE("ppm roundtrip") {
    TempDir dir;
    const RawImage img = random_image(32, 5);
    write_ppm(dir.path / "a.ppm", img);
    const RawImage back = read_ppm(dir.path / "a.ppm");
    CHECK(back.width == 32);
    CHECK(back.height == 32);
    CHECK(back.rgb == img.rgb);
  }

  TEST_CASE("ppm header comments and bad magic") {
    TempDir dir;
    {
      std::ofstream f(dir.path / "c.ppm", std::ios::binary);
      f << "P6\n# comment\n2 1\n255\n";
      f.write("\x01\x02\x03\x04\x05\x06", 6);
    }
    const RawImage img = read_ppm(dir.path / "c.ppm");
    CHECK(img.rgb == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
    {
      std::ofstream f(dir.path / "p3.ppm");
      f << "P3\n1 1\n255\n0 0 0\n";
    }
    CHECK_THROWS(read_ppm(dir.path / "p3.ppm"));
  }

  TEST_CASE("dataset parsing resolves files and accepts numeric ids") {
    TempDir dir;
    {
      std::ofstream f(dir.path / "ds.json");
      f << R"({"images":[{"id":1,"file":"a.ppm","width":10,"height":20}],
               "annotations":[{"image_id":1,"bbox":[1,2,3,4],"category":"cat"}],
               "categories":["cat","dog"]})";
    }
    const Dataset ds = load_dataset(dir.path / "ds.json");
    REQUIRE(ds.images.size() == 1);
    CHECK(ds.images[0].id == "1");
    CHECK(ds.images[0].file == dir.path / "a.ppm");
    CHECK(ds.annotations[0].image_id == "1");
    CHECK(ds.annotations[0].bbox == std::array<double, 4>{1, 2, 3, 4});
    CHECK(ds.categories == std::vector<std::string>{"cat", "dog"});
  }

  TEST_CASE("jsonl roundtrip") {
    const DetectionRecord r{"img", "cat", 0.25, {1.5, 2, 30, 40}};
    const DetectionRecord back = parse_detection_line(to_jsonl(r));
    CHECK(back.image_id == "img");
    CHECK(back.category == "cat");
    CHECK(back.score == 0.25);
    CHECK(back.bbox == r.bbox);
  }

  TEST_CASE("records map the canvas back to source pixels") {
    const Image img = preprocess_image(random_image(32, 1), 64);  // scale 2
    DetectionSet det;
    det.boxes = Tensor({1, 4}, std::vector<float>{0.5f, 0.5f, 0.5f, 0.25f});
    det.scores = {0.5f};
    det.labels = {0};
    det.source_token = {0};
    const auto recs = to_records(det, img, {"cat"}, "x");
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].bbox[0] == doctest::Approx(8));
    CHECK(recs[0].bbox[1] == doctest::Approx(12));
    CHECK(recs[0].bbox[2] == doctest::Approx(16));
    CHECK(recs[0].bbox[3] == doctest::Approx(8));
  }
}

TEST_SUITE("zero-shot eval") {
  TEST_CASE("output is independent of the thread count") {
    TempDir dir;
    {
      std::ofstream f(dir.path / "ds.json");
      f << R"({"images":[)";
      for (int i = 0; i < 4; ++i) {
        write_ppm(dir.path / ("im" + std::to_string(i) + ".ppm"), random_image(64, 20 + i));
        f << (i ? "," : "") << R"({"id":)" << i << R"(,"file":"im)" << i << R"(.ppm","width":64,"height":64})";
      }
      f << R"(],"annotations":[{"image_id":0,"bbox":[4,4,20,20],"category":"cat"},
               {"image_id":2,"bbox":[10,30,30,20],"category":"dog"}],"categories":["cat","dog"]})";
    }
    const Dataset ds = load_dataset(dir.path / "ds.json");
    ModelConfig cfg = test::small_config();
    cfg.head.threshold = 0.0f;
    const WeightStore ws = init_weights(cfg, 6);
    EvalOptions one, many;
    many.threads = 3;
    const EvalRun a = run_zero_shot_eval(ds, ws, cfg, one);
    const EvalRun b = run_zero_shot_eval(ds, ws, cfg, many);
    REQUIRE(a.detections.size() == b.detections.size());
    CHECK(a.detections.size() == 4 * cfg.head.num_queries);
    for (std::size_t i = 0; i < a.detections.size(); ++i) CHECK(to_jsonl(a.detections[i]) == to_jsonl(b.detections[i]));
    CHECK(a.ap.per_class == b.ap.per_class);
    CHECK(a.ap.per_class.size() == 2);

    const std::string cfg_json = config_to_json(cfg);
    const std::string w = (dir.path / "w.gde").string();
    REQUIRE(cli({"--config", cfg_json, "--weights", w, "init-weights"}).code == 0);
    const std::string out = (dir.path / "dets.jsonl").string();
    const CliResult r = cli({"--config", cfg_json, "--weights", w, "eval", "--dataset",
                             (dir.path / "ds.json").string(), "--out", out, "--threads", "2"});
    CHECK(r.code == 0);
    std::ifstream f(out);
    std::size_t n = 0;
    for (std::string line; std::getline(f, line);) ++n;
    CHECK(n == 4 * cfg.head.num_queries);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("tokens") {
    const CliResult r = cli({"tokens", "--size", "640"});
    CHECK(r.code == 0);
    CHECK(r.out.find("total 8400") != std::string::npos);
    CHECK(r.out.find("ratio 21") != std::string::npos);
  }

  TEST_CASE("unknown subcommand is a usage error") {
    const CliResult r = cli({"frobnicate"});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(cli({}).code == 2);
    CHECK(cli({"tokens", "--bogus"}).code == 2);
  }

  TEST_CASE("infer without a weights file names the file") {
    TempDir dir;
    const std::string missing = (dir.path / "weights.gde").string();
    const CliResult r = cli({"--weights", missing, "infer", "--image", "x.ppm", "--prompt", "cat"});
    CHECK(r.code == 1);
    CHECK(r.err.find("weights.gde") != std::string::npos);
  }

  TEST_CASE("init-weights then infer on a small config") {
    TempDir dir;
    const std::string cfg = config_to_json(test::small_config());
    const std::string w = (dir.path / "w.gde").string();
    const std::string img = (dir.path / "img.ppm").string();
    write_ppm(img, random_image(64, 3));
    REQUIRE(cli({"--config", cfg, "--weights", w, "init-weights"}).code == 0);
    const CliResult r = cli({"--config", cfg, "--weights", w, "infer", "--image", img, "--prompt",
                             "cat. dog", "--threshold", "0"});
    CHECK(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      const DetectionRecord rec = parse_detection_line(line);
      CHECK(rec.image_id == "img");
      CHECK((rec.category == "cat" || rec.category == "dog"));
      ++n;
    }
    CHECK(n == test::small_config().head.num_queries);
  }

  TEST_CASE("weights built for another config are rejected") {
    TempDir dir;
    const std::string w = (dir.path / "w.gde").string();
    REQUIRE(cli({"--config", config_to_json(test::small_config()), "--weights", w, "init-weights"}).code == 0);
    ModelConfig other = test::small_config();
    other.d_model = 16;
    const CliResult r = cli({"--config", config_to_json(other), "--weights", w, "flops", "--size", "64"});
    CHECK(r.code == 1);
    CHECK(r.err.find("config") != std::string::npos);
  }

  TEST_CASE("global options may follow the subcommand") {
    TempDir dir;
    const std::string w = (dir.path / "w.gde").string();
    CHECK(cli({"init-weights", "--config", config_to_json(test::small_config()), "--weights", w, "--seed", "9"}).code == 0);
    CHECK(load_weights(w).seed == 9);
  }

  TEST_CASE("flops prints a ratio for both variants") {
    const CliResult r = cli({"--config", config_to_json(test::small_config()), "flops", "--size", "64"});
    CHECK(r.code == 0);
    CHECK(r.out.find("enhancer ratio original/efficient:") != std::string::npos);
  }
}
