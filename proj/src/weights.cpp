// SPDX-License-Identifier: Apache-2.0
#include "gde/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "gde/hash.hpp"
#include "json.hpp"

namespace gde {

using nlohmann::json;

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("weights: missing parameter '" + name + "'");
  return it->second;
}

Tensor& WeightStore::get_mutable(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("weights: missing parameter '" + name + "'");
  return it->second;
}

void WeightStore::set(const std::string& name, Tensor value) {
  tensors_.insert_or_assign(name, std::move(value));
}

std::size_t WeightStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

void WeightStore::zero_prefix(const std::string& prefix) {
  for (auto& [name, t] : tensors_) {
    if (name.rfind(prefix, 0) == 0) {
      for (auto& v : t.data()) v = 0.0f;
    }
  }
}

namespace {

class SpecBuilder {
 public:
  explicit SpecBuilder(std::vector<ParamSpec>& out) : out_(out) {}

  void weight(const std::string& name, Shape shape) {
    out_.push_back({name, std::move(shape), ParamKind::weight});
  }
  void linear(const std::string& prefix, std::size_t in, std::size_t out) {
    weight(prefix + ".weight", {in, out});
    out_.push_back({prefix + ".bias", {out}, ParamKind::bias});
  }
  void conv(const std::string& prefix, std::size_t cout, std::size_t cin, std::size_t k) {
    weight(prefix + ".weight", {cout, cin, k, k});
    out_.push_back({prefix + ".bias", {cout}, ParamKind::bias});
  }
  void norm(const std::string& prefix, std::size_t d) {
    out_.push_back({prefix + ".gamma", {d}, ParamKind::gain});
    out_.push_back({prefix + ".beta", {d}, ParamKind::bias});
  }
  void attention(const std::string& prefix, std::size_t d) {
    for (const char* p : {"q", "k", "v", "out"}) linear(prefix + "." + p, d, d);
  }
  void ffn(const std::string& prefix, std::size_t d, std::size_t hidden) {
    linear(prefix + ".fc1", d, hidden);
    linear(prefix + ".fc2", hidden, d);
  }
  void deformable(const std::string& prefix, std::size_t d, std::size_t heads, std::size_t levels,
                  std::size_t points) {
    linear(prefix + ".value", d, d);
    linear(prefix + ".offset", d, heads * levels * points * 2);
    linear(prefix + ".weight", d, heads * levels * points);
    linear(prefix + ".out", d, d);
  }

 private:
  std::vector<ParamSpec>& out_;
};

}  // namespace

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  SpecBuilder b(specs);
  const std::size_t d = cfg.d_model;
  constexpr std::size_t levels = 3;

  b.weight("text.token_embed", {cfg.text.vocab, d});
  b.weight("text.pos_embed", {cfg.text.max_phrase_len, d});
  for (std::size_t i = 0; i < cfg.text.layers; ++i) {
    const std::string p = "text.layer" + std::to_string(i);
    b.norm(p + ".norm1", d);
    b.attention(p + ".attn", d);
    b.norm(p + ".norm2", d);
    b.ffn(p + ".ffn", d, cfg.text.ffn_dim);
  }

  const auto& ch = cfg.backbone_channels;
  b.conv("backbone.stem", ch[0], 3, 4);
  for (std::size_t s = 1; s <= 3; ++s) {
    b.conv("backbone.stage" + std::to_string(s), ch[s], ch[s - 1], 3);
    b.conv("backbone.lateral" + std::to_string(s + 2), d, ch[s], 1);
  }

  const auto& e = cfg.enhancer;
  b.weight("enhancer.level_embed", {levels, d});
  for (std::size_t i = 0; i < e.layers; ++i) {
    const std::string p = "enhancer.layer" + std::to_string(i);
    b.deformable(p + ".deform", d, e.heads, levels, e.deformable_points);
    b.norm(p + ".deform_norm", d);
    b.attention(p + ".vanilla", d);
    b.norm(p + ".vanilla_norm", d);
    b.norm(p + ".fusion.img_norm", d);
    b.norm(p + ".fusion.text_norm", d);
    b.attention(p + ".fusion.img_attn", d);
    b.attention(p + ".fusion.text_attn", d);
    b.attention(p + ".text_attn", d);
    b.norm(p + ".text_attn_norm", d);
    b.ffn(p + ".img_ffn", d, e.ffn_dim);
    b.norm(p + ".img_ffn_norm", d);
    b.ffn(p + ".text_ffn", d, e.ffn_dim);
    b.norm(p + ".text_ffn_norm", d);
  }
  for (const char* blk : {"td4", "td3", "bu4", "bu5"}) {
    const std::string p = std::string("cross_scale.") + blk;
    b.conv(p + ".reduce", e.fusion_hidden, 2 * d, 1);
    b.conv(p + ".mix", d, e.fusion_hidden, 3);
  }
  b.conv("cross_scale.down3", d, d, 3);
  b.conv("cross_scale.down4", d, d, 3);

  const auto& h = cfg.head;
  b.linear("head.query_proj", d, d);
  specs.push_back({"head.anchor_size_offset", {levels}, ParamKind::bias});
  for (std::size_t i = 0; i < h.decoder_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    b.linear(p + ".query_pos", d, d);
    b.attention(p + ".self_attn", d);
    b.norm(p + ".self_norm", d);
    b.deformable(p + ".img_cross", d, h.heads, levels, h.decoder_points);
    b.norm(p + ".img_norm", d);
    b.attention(p + ".text_cross", d);
    b.norm(p + ".text_norm", d);
    b.ffn(p + ".ffn", d, h.ffn_dim);
    b.norm(p + ".ffn_norm", d);
    b.linear(p + ".box.fc1", d, d);
    b.linear(p + ".box.fc2", d, 4);
  }
  return specs;
}

double xavier_bound(const Shape& shape) {
  double fan_in = 1, fan_out = 1;
  if (shape.size() == 4) {
    const double rf = static_cast<double>(shape[2] * shape[3]);
    fan_in = static_cast<double>(shape[1]) * rf;
    fan_out = static_cast<double>(shape[0]) * rf;
  } else if (shape.size() == 2) {
    fan_in = static_cast<double>(shape[0]);
    fan_out = static_cast<double>(shape[1]);
  } else if (shape.size() == 1) {
    fan_in = fan_out = static_cast<double>(shape[0]);
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  WeightStore ws;
  ws.seed = seed;
  ws.config_digest = config_digest(cfg);
  for (const auto& spec : parameter_specs(cfg)) {
    Tensor t(spec.shape);
    switch (spec.kind) {
      case ParamKind::bias:
        break;
      case ParamKind::gain:
        for (auto& v : t.data()) v = 1.0f;
        break;
      case ParamKind::weight: {
        const double bound = xavier_bound(spec.shape);
        const std::uint64_t key = mix64(seed ^ xxh64(spec.name));
        auto data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
          const double u = unit_interval(counter_draw(key, i));
          data[i] = static_cast<float>((2.0 * u - 1.0) * bound);
        }
        break;
      }
    }
    ws.set(spec.name, std::move(t));
  }
  return ws;
}

// ---------------------------------------------------------------------------
// File format: "GDE1" | u32 version | u64 header_len | header JSON |
//              f32 payload | u32 CRC32(payload), all little-endian.

namespace {

constexpr char kMagic[4] = {'G', 'D', 'E', '1'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | in[at + static_cast<std::size_t>(i)];
  return v;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const WeightStore& ws) {
  json header = json::object();
  header["__metadata__"] = {{"seed", ws.seed}, {"config_digest", ws.config_digest}};
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ws.tensors()) {
    const std::uint64_t len = t.size() * sizeof(float);
    header[name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}, {"length", len}};
    offset += len;
  }
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + header_text.size() + offset + 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le(out, kWeightFormatVersion, 4);
  put_le(out, header_text.size(), 8);
  out.insert(out.end(), header_text.begin(), header_text.end());
  const std::size_t payload_start = out.size();
  for (const auto& [_, t] : ws.tensors())
    for (float v : t.data()) put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  put_le(out, crc32_of(std::span(out).subspan(payload_start)), 4);
  return out;
}

WeightStore deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw LoadError(LoadErrorKind::truncated, "weights: file truncated before magic");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw LoadError(LoadErrorKind::magic, "weights: bad magic bytes (expected GDE1)");
  }
  if (bytes.size() < 16) throw LoadError(LoadErrorKind::truncated, "weights: file truncated in preamble");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kWeightFormatVersion) {
    throw LoadError(LoadErrorKind::version, "weights: unsupported format version " +
                                                std::to_string(version));
  }
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - 16) {
    throw LoadError(LoadErrorKind::truncated, "weights: file truncated in header");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::header, std::string("weights: malformed header: ") + e.what());
  }
  const std::size_t payload_start = 16 + header_len;

  WeightStore ws;
  std::uint64_t payload_len = 0;
  try {
    for (const auto& [name, entry] : header.items()) {
      if (name == "__metadata__") {
        ws.seed = entry.at("seed").get<std::uint64_t>();
        ws.config_digest = entry.at("config_digest").get<std::string>();
        continue;
      }
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw LoadError(LoadErrorKind::header, "weights: unsupported dtype for '" + name + "'");
      }
      payload_len = std::max(payload_len, entry.at("offset").get<std::uint64_t>() +
                                              entry.at("length").get<std::uint64_t>());
    }
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::header, std::string("weights: malformed header: ") + e.what());
  }
  if (bytes.size() < payload_start + payload_len + 4) {
    throw LoadError(LoadErrorKind::truncated, "weights: file truncated in payload");
  }
  const auto payload = bytes.subspan(payload_start, payload_len);
  const auto stored_crc = static_cast<std::uint32_t>(get_le(bytes, payload_start + payload_len, 4));
  if (stored_crc != crc32_of(payload)) {
    throw LoadError(LoadErrorKind::checksum, "weights: payload checksum mismatch");
  }

  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto length = entry.at("length").get<std::uint64_t>();
    if (length != shape_numel(shape) * sizeof(float)) {
      throw LoadError(LoadErrorKind::header, "weights: length/shape mismatch for '" + name + "'");
    }
    std::vector<float> values(shape_numel(shape));
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = std::bit_cast<float>(
          static_cast<std::uint32_t>(get_le(payload, offset + 4 * i, 4)));
    }
    ws.set(name, Tensor(std::move(shape), std::move(values)));
  }
  return ws;
}

void save_weights(const WeightStore& ws, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(ws);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError(LoadErrorKind::io, "cannot open weights file '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw LoadError(LoadErrorKind::io, "failed writing weights file '" + path.string() + "'");
}

WeightStore load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(LoadErrorKind::io, "cannot open weights file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

}  // namespace gde
