// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <set>

#include "doctest.h"
#include "gde/bench.hpp"
#include "gde/enhancer.hpp"
#include "gde/errors.hpp"
#include "gde/head.hpp"
#include "support.hpp"

using namespace gde;

namespace {

constexpr std::array<std::size_t, 3> kAll{kLevelP3, kLevelP4, kLevelP5};

struct Fixture {
  ModelConfig cfg = test::small_config();
  WeightStore ws = init_weights(cfg, 21);

  TokenizedPyramid memory(std::uint64_t seed) const {
    const std::size_t d = cfg.d_model;
    const FeaturePyramid p{test::random_tensor({d, 8, 8}, seed), test::random_tensor({d, 4, 4}, seed + 1),
                           test::random_tensor({d, 2, 2}, seed + 2)};
    return flatten_pyramid(p, kAll, ws);
  }
  TextFeatures text(const std::vector<std::string>& phrases) const {
    return encode_text(tokenize(test::prompt_of(phrases), cfg.text.vocab), ws, cfg);
  }
};

bool strictly_inside(const Tensor& boxes) {
  for (float v : boxes.data())
    if (!(v > 0.0f && v < 1.0f)) return false;
  return true;
}

}  // namespace

TEST_SUITE("query selection") {
  TEST_CASE("one-hot tokens matching the text are selected") {
    Fixture fx;
    TokenizedPyramid tp = fx.memory(1);
    const std::size_t d = fx.cfg.d_model;
    tp.tokens = Tensor({tp.size(), d});
    for (std::size_t t = 0; t < tp.size(); ++t) tp.tokens(t, (t % (d - 3)) + 3) = 0.1f;
    const std::vector<std::size_t> targets{10, 50, 77};
    TextFeatures text;
    text.features = Tensor({3, d});
    text.phrase_spans = {{0, 1}, {1, 2}, {2, 3}};
    for (std::size_t i = 0; i < 3; ++i) {
      tp.tokens(targets[i], i) = 1.0f;
      text.features(i, i) = 1.0f;
    }
    const QuerySet q = language_guided_query_selection(tp, text, 3, fx.ws);
    CHECK(q.source_token == targets);
    CHECK(q.content.shape() == Shape{3, d});
  }

  TEST_CASE("scores are non-increasing and anchors are inside the unit box") {
    Fixture fx;
    const TokenizedPyramid tp = fx.memory(2);
    const QuerySet q = language_guided_query_selection(tp, fx.text({"cat", "dog"}), 20, fx.ws);
    for (std::size_t i = 1; i < q.size(); ++i) CHECK(q.scores[i - 1] >= q.scores[i]);
    CHECK(strictly_inside(q.anchors));
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(q.anchors(i, 0) == tp.positions(q.source_token[i], 0));
      CHECK(q.anchors(i, 1) == tp.positions(q.source_token[i], 1));
    }
  }

  TEST_CASE("K equal to N selects every token in score order") {
    Fixture fx;
    const TokenizedPyramid tp = fx.memory(3);
    const QuerySet q = language_guided_query_selection(tp, fx.text({"cat"}), tp.size(), fx.ws);
    CHECK(std::set<std::size_t>(q.source_token.begin(), q.source_token.end()).size() == tp.size());
    for (std::size_t i = 1; i < q.size(); ++i) CHECK(q.scores[i - 1] >= q.scores[i]);
  }

  TEST_CASE("K outside [1, N] is rejected") {
    Fixture fx;
    const TokenizedPyramid tp = fx.memory(4);
    CHECK_THROWS_AS(language_guided_query_selection(tp, fx.text({"cat"}), tp.size() + 1, fx.ws), ValidationError);
    CHECK_THROWS_AS(language_guided_query_selection(tp, fx.text({"cat"}), 0, fx.ws), ValidationError);
  }
}

TEST_SUITE("decoder") {
  TEST_CASE("zero layers returns the input queries") {
    Fixture fx;
    const TokenizedPyramid tp = fx.memory(5);
    const TextFeatures t = fx.text({"cat"});
    const QuerySet q = language_guided_query_selection(tp, t, 10, fx.ws);
    const DecoderOutput out = decoder_forward(q, tp, t, fx.ws, fx.cfg.head, 0);
    CHECK(out.final.content == q.content);
    CHECK(out.final.anchors == q.anchors);
    CHECK(out.content.shape() == Shape{0, 10, fx.cfg.d_model});
  }

  TEST_CASE("per-layer outputs and anchors stay inside the unit box") {
    Fixture fx;
    const TokenizedPyramid tp = fx.memory(6);
    const TextFeatures t = fx.text({"cat", "dog"});
    const QuerySet q = language_guided_query_selection(tp, t, 12, fx.ws);
    const DecoderOutput out = decoder_forward(q, tp, t, fx.ws, fx.cfg.head, 2);
    CHECK(out.content.shape() == Shape{2, 12, fx.cfg.d_model});
    CHECK(out.anchors.shape() == Shape{2, 12, 4});
    CHECK(strictly_inside(out.anchors));
    CHECK(test::all_finite(out.content));
  }

  TEST_CASE("large refinements saturate but stay inside the unit box") {
    Fixture fx;
    fx.ws.set("decoder.layer0.box.fc2.bias", Tensor({4}, 1e6f));
    fx.ws.set("decoder.layer1.box.fc2.bias", Tensor({4}, -1e6f));
    const TokenizedPyramid tp = fx.memory(7);
    const TextFeatures t = fx.text({"cat"});
    const QuerySet q = language_guided_query_selection(tp, t, 5, fx.ws);
    const DecoderOutput out = decoder_forward(q, tp, t, fx.ws, fx.cfg.head, 2);
    CHECK(strictly_inside(out.anchors));
  }
}

TEST_SUITE("contrastive logits") {
  TEST_CASE("content equal to a phrase token scores that phrase highest") {
    Fixture fx;
    const TextFeatures t = fx.text({"cat", "dog", "fire hydrant"});
    Tensor content({3, fx.cfg.d_model});
    for (std::size_t j = 0; j < 3; ++j)
      std::copy_n(t.features.row(t.phrase_spans[j].begin).begin(), fx.cfg.d_model, content.row(j).begin());
    const Tensor logits = contrastive_logits(content, t);
    for (std::size_t j = 0; j < 3; ++j) {
      auto row = logits.row(j);
      CHECK(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == j);
    }
  }

  TEST_CASE("single-token phrases reduce to a scaled dot product") {
    Fixture fx;
    const TextFeatures t = fx.text({"cat", "dog"});
    const Tensor content = test::random_tensor({4, fx.cfg.d_model}, 8);
    const Tensor logits = contrastive_logits(content, t);
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < 2; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < fx.cfg.d_model; ++c) dot += double(content(k, c)) * t.features(j, c);
        CHECK(logits(k, j) == doctest::Approx(dot / std::sqrt(double(fx.cfg.d_model))).epsilon(1e-5));
      }
  }

  TEST_CASE("phrase permutation permutes logit columns") {
    Fixture fx;
    const Tensor content = test::random_tensor({6, fx.cfg.d_model}, 9);
    const Tensor a = contrastive_logits(content, fx.text({"cat", "hot dog", "car"}));
    const Tensor b = contrastive_logits(content, fx.text({"car", "cat", "hot dog"}));
    for (std::size_t k = 0; k < 6; ++k)
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(a(k, j) - b(k, (j + 1) % 3)) < 1e-5);
  }
}

TEST_SUITE("postprocess") {
  const Tensor logits({4, 2}, std::vector<float>{0.5f, -1.0f, 2.0f, 1.0f, -3.0f, -2.0f, 0.1f, 0.3f});
  const Tensor boxes({4, 4}, 0.5f);

  TEST_CASE("threshold one keeps nothing") { CHECK(postprocess(logits, boxes, 1.0f, 100).size() == 0); }

  TEST_CASE("threshold zero keeps min(K, max_detections)") {
    CHECK(postprocess(logits, boxes, 0.0f, 100).size() == 4);
    CHECK(postprocess(logits, boxes, 0.0f, 3).size() == 3);
  }

  TEST_CASE("scores sorted descending with argmax labels") {
    const DetectionSet d = postprocess(logits, boxes, 0.0f, 100);
    CHECK(d.labels == std::vector<std::size_t>{0, 0, 1, 1});
    CHECK(d.source_token == std::vector<std::size_t>{1, 0, 3, 2});
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(d.scores[i] >= 0.0f);
      CHECK(d.scores[i] <= 1.0f);
      if (i) CHECK(d.scores[i - 1] >= d.scores[i]);
    }
    CHECK(d.scores[0] == doctest::Approx(1 / (1 + std::exp(-2.0))));
  }

  TEST_CASE("raising the threshold only removes detections") {
    const DetectionSet lo = postprocess(logits, boxes, 0.2f, 100);
    const DetectionSet hi = postprocess(logits, boxes, 0.6f, 100);
    CHECK(hi.size() <= lo.size());
    for (std::size_t i = 0; i < hi.size(); ++i) CHECK(hi.source_token[i] == lo.source_token[i]);
  }

  TEST_CASE("threshold outside [0,1]") {
    CHECK_THROWS_AS(postprocess(logits, boxes, 1.5f, 10), ValidationError);
    CHECK_THROWS_AS(postprocess(logits, boxes, -0.1f, 10), ValidationError);
  }
}

TEST_SUITE("predict") {
  TEST_CASE("deterministic and well-formed") {
    Fixture fx;
    fx.cfg.head.threshold = 0.0f;
    const RawImage img = random_image(80, 4);
    const Prompt p = test::prompt_of({"cat", "dog"});
    const DetectionSet a = predict(img, p, fx.ws, fx.cfg);
    const DetectionSet b = predict(img, p, fx.ws, fx.cfg);
    CHECK(a == b);
    CHECK(a.size() == fx.cfg.head.num_queries);
    for (std::size_t l : a.labels) CHECK(l < 2);
    CHECK(strictly_inside(a.boxes));
  }

  TEST_CASE("query count is capped by the token count") {
    Fixture fx;
    fx.cfg.head.num_queries = 500;
    fx.cfg.head.threshold = 0.0f;
    const DetectionSet d = predict(random_image(64, 1), test::prompt_of({"cat"}), fx.ws, fx.cfg);
    CHECK(d.size() == 84);
  }

  TEST_CASE("default configuration at 640 runs end to end") {
    ModelConfig cfg;
    const WeightStore ws = init_weights(cfg, 1);
    const DetectionSet d = predict(random_image(640, 2), test::prompt_of({"person", "chair"}), ws, cfg);
    CHECK(d.size() <= cfg.head.max_detections);
    CHECK(strictly_inside(d.boxes));
  }

  TEST_CASE("late fusion: the pyramid entering query selection ignores the prompt") {
    Fixture fx;
    fx.cfg.enhancer.fusion_mode = FusionMode::none;
    const Image img = preprocess_image(random_image(64, 3), 64);
    const ModelOutputs a = run_model(img, test::prompt_of({"cat"}), fx.ws, fx.cfg);
    const ModelOutputs b = run_model(img, test::prompt_of({"bus", "tie"}), fx.ws, fx.cfg);
    CHECK(a.enhanced.pyramid == b.enhanced.pyramid);
    CHECK_FALSE(a.logits.shape() == b.logits.shape());
  }

  TEST_CASE("phrase permutation relabels detections") {
    Fixture fx;
    fx.cfg.head.threshold = 0.0f;
    const RawImage img = random_image(64, 5);
    const DetectionSet a = predict(img, test::prompt_of({"cat", "dog", "car"}), fx.ws, fx.cfg);
    const DetectionSet b = predict(img, test::prompt_of({"car", "cat", "dog"}), fx.ws, fx.cfg);
    REQUIRE(a.size() == b.size());
    const std::size_t to_b[3] = {1, 2, 0};
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto it = std::find(b.source_token.begin(), b.source_token.end(), a.source_token[i]);
      REQUIRE(it != b.source_token.end());
      const std::size_t j = static_cast<std::size_t>(it - b.source_token.begin());
      CHECK(b.labels[j] == to_b[a.labels[i]]);
      CHECK(std::abs(a.scores[i] - b.scores[j]) < 1e-5);
      for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(a.boxes(i, c) - b.boxes(j, c)) < 1e-5);
    }
  }
}
