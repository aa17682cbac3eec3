// SPDX-License-Identifier: Apache-2.0
#include "gde/config.hpp"

#include <cstdio>

#include "gde/errors.hpp"
#include "gde/hash.hpp"
#include "json.hpp"

namespace gde {

using nlohmann::json;

std::string_view to_string(EnhancerVariant v) {
  return v == EnhancerVariant::original ? "original" : "efficient";
}

std::string_view to_string(FusionMode m) { return m == FusionMode::early ? "early" : "none"; }

EnhancerVariant parse_variant(std::string_view s) {
  if (s == "original") return EnhancerVariant::original;
  if (s == "efficient") return EnhancerVariant::efficient;
  throw ConfigError("unknown enhancer variant '" + std::string(s) + "'");
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "early") return FusionMode::early;
  if (s == "none") return FusionMode::none;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (d_model == 0) fail("d_model must be positive");
  if (d_model % 4 != 0) fail("d_model must be divisible by 4 for position encodings");
  if (image_size == 0 || image_size % 32 != 0) fail("image_size must be a multiple of 32");
  for (auto c : backbone_channels)
    if (c == 0) fail("backbone channels must be positive");
  if (text.vocab < 256) fail("text.vocab must be >= 256");
  if (text.heads == 0 || d_model % text.heads != 0) fail("text.heads must divide d_model");
  if (text.max_phrase_len == 0) fail("text.max_phrase_len must be positive");
  if (enhancer.heads == 0 || d_model % enhancer.heads != 0)
    fail("enhancer.heads must divide d_model");
  if (enhancer.deformable_points == 0) fail("enhancer.deformable_points must be positive");
  if (enhancer.ffn_dim == 0 || enhancer.fusion_hidden == 0) fail("enhancer widths must be positive");
  if (head.heads == 0 || d_model % head.heads != 0) fail("head.heads must divide d_model");
  if (head.num_queries == 0) fail("head.num_queries must be positive");
  if (head.decoder_points == 0) fail("head.decoder_points must be positive");
  if (!(head.threshold >= 0.0f && head.threshold <= 1.0f)) fail("head.threshold must be in [0,1]");
}

namespace {

json to_json_object(const ModelConfig& c) {
  return json{
      {"d_model", c.d_model},
      {"image_size", c.image_size},
      {"backbone_channels", c.backbone_channels},
      {"text",
       {{"vocab", c.text.vocab},
        {"layers", c.text.layers},
        {"heads", c.text.heads},
        {"max_phrase_len", c.text.max_phrase_len},
        {"ffn_dim", c.text.ffn_dim}}},
      {"enhancer",
       {{"variant", to_string(c.enhancer.variant)},
        {"fusion_mode", to_string(c.enhancer.fusion_mode)},
        {"layers", c.enhancer.layers},
        {"heads", c.enhancer.heads},
        {"deformable_points", c.enhancer.deformable_points},
        {"ffn_dim", c.enhancer.ffn_dim},
        {"fusion_hidden", c.enhancer.fusion_hidden}}},
      {"head",
       {{"num_queries", c.head.num_queries},
        {"decoder_layers", c.head.decoder_layers},
        {"heads", c.head.heads},
        {"decoder_points", c.head.decoder_points},
        {"ffn_dim", c.head.ffn_dim},
        {"threshold", c.head.threshold},
        {"max_detections", c.head.max_detections}}},
  };
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ModelConfig config_from_json(std::string_view text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    read_if(j, "d_model", c.d_model);
    read_if(j, "image_size", c.image_size);
    read_if(j, "backbone_channels", c.backbone_channels);
    if (j.contains("text")) {
      const auto& t = j.at("text");
      read_if(t, "vocab", c.text.vocab);
      read_if(t, "layers", c.text.layers);
      read_if(t, "heads", c.text.heads);
      read_if(t, "max_phrase_len", c.text.max_phrase_len);
      read_if(t, "ffn_dim", c.text.ffn_dim);
    }
    if (j.contains("enhancer")) {
      const auto& e = j.at("enhancer");
      if (e.contains("variant")) c.enhancer.variant = parse_variant(e.at("variant").get<std::string>());
      if (e.contains("fusion_mode"))
        c.enhancer.fusion_mode = parse_fusion_mode(e.at("fusion_mode").get<std::string>());
      read_if(e, "layers", c.enhancer.layers);
      read_if(e, "heads", c.enhancer.heads);
      read_if(e, "deformable_points", c.enhancer.deformable_points);
      read_if(e, "ffn_dim", c.enhancer.ffn_dim);
      read_if(e, "fusion_hidden", c.enhancer.fusion_hidden);
    }
    if (j.contains("head")) {
      const auto& h = j.at("head");
      read_if(h, "num_queries", c.head.num_queries);
      read_if(h, "decoder_layers", c.head.decoder_layers);
      read_if(h, "heads", c.head.heads);
      read_if(h, "decoder_points", c.head.decoder_points);
      read_if(h, "ffn_dim", c.head.ffn_dim);
      read_if(h, "threshold", c.head.threshold);
      read_if(h, "max_detections", c.head.max_detections);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const ModelConfig& cfg) { return to_json_object(cfg).dump(2); }

std::string config_digest(const ModelConfig& cfg) {
  json j = to_json_object(cfg);
  j.erase("image_size");
  j["enhancer"].erase("variant");
  j["enhancer"].erase("fusion_mode");
  j["head"].erase("threshold");
  j["head"].erase("max_detections");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace gde
