// SPDX-License-Identifier: Apache-2.0
#include "gde/text.hpp"

#include <algorithm>
#include <cctype>

#include "gde/flops.hpp"
#include "gde/hash.hpp"
#include "gde/layers.hpp"

namespace gde {

namespace {

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

Prompt assemble_prompt(std::span<const std::string> categories) {
  if (categories.empty()) throw ValidationError("prompt: category list is empty");
  Prompt p;
  p.mode = PromptMode::categories;
  for (const auto& raw : categories) {
    std::string c = trim(raw);
    if (c.empty()) throw ValidationError("prompt: empty category name");
    if (!p.text.empty()) p.text += ' ';
    const std::size_t begin = p.text.size();
    p.text += c;
    p.offsets.push_back({begin, p.text.size()});
    p.text += '.';
    p.phrases.push_back(std::move(c));
  }
  return p;
}

Prompt caption_prompt(std::string caption, std::vector<CharSpan> spans) {
  if (spans.empty()) throw ValidationError("prompt: caption has no phrase spans");
  Prompt p;
  p.mode = PromptMode::caption;
  for (const auto& s : spans) {
    if (s.begin >= s.end || s.end > caption.size()) {
      throw ValidationError("prompt: invalid caption span [" + std::to_string(s.begin) + "," +
                            std::to_string(s.end) + ")");
    }
    std::string phrase = caption.substr(s.begin, s.end - s.begin);
    if (trim(phrase).empty()) throw ValidationError("prompt: caption span is blank");
    p.phrases.push_back(std::move(phrase));
  }
  p.text = std::move(caption);
  p.offsets = std::move(spans);
  return p;
}

Prompt parse_category_text(std::string_view text) {
  std::vector<std::string> cats;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t dot = text.find('.', start);
    const std::size_t end = dot == std::string_view::npos ? text.size() : dot;
    std::string c = trim(text.substr(start, end - start));
    if (!c.empty()) cats.push_back(std::move(c));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return assemble_prompt(cats);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::uint32_t token_id(std::string_view word, std::size_t vocab_size) {
  return static_cast<std::uint32_t>(xxh64(word) % vocab_size);
}

TokenizedPrompt tokenize(const Prompt& prompt, std::size_t vocab_size) {
  if (vocab_size < 256) throw ValidationError("tokenize: vocab_size must be >= 256");
  if (prompt.phrases.empty()) throw ValidationError("tokenize: prompt has no phrases");
  TokenizedPrompt tp;
  for (const auto& phrase : prompt.phrases) {
    const auto words = split_words(phrase);
    if (words.empty()) {
      throw ValidationError("tokenize: phrase '" + phrase + "' produces no tokens");
    }
    const std::size_t begin = tp.token_ids.size();
    for (std::size_t i = 0; i < words.size(); ++i) {
      tp.token_ids.push_back(token_id(words[i], vocab_size));
      tp.position_ids.push_back(i);
    }
    tp.phrase_spans.push_back({begin, tp.token_ids.size()});
  }
  tp.self_mask = build_phrase_mask(tp.phrase_spans, tp.token_ids.size());
  return tp;
}

Mask build_phrase_mask(std::span<const TokenSpan> spans, std::size_t length) {
  Mask m(length, length, false);
  std::vector<char> owned(length, 0);
  for (const auto& s : spans) {
    if (s.begin >= s.end || s.end > length) {
      throw ValidationError("phrase mask: span [" + std::to_string(s.begin) + "," +
                            std::to_string(s.end) + ") invalid for length " +
                            std::to_string(length));
    }
    for (std::size_t i = s.begin; i < s.end; ++i) {
      if (owned[i]) throw ValidationError("phrase mask: overlapping spans at token " + std::to_string(i));
      owned[i] = 1;
    }
    for (std::size_t i = s.begin; i < s.end; ++i)
      for (std::size_t j = s.begin; j < s.end; ++j) m.set(i, j, true);
  }
  return m;
}

TextFeatures encode_text(const TokenizedPrompt& tp, const WeightStore& ws, const ModelConfig& cfg) {
  flops::Stage stage("text-encoder");
  const std::size_t d = cfg.d_model;
  const std::size_t n = tp.size();
  const Tensor& tok = ws.get("text.token_embed");
  const Tensor& pos = ws.get("text.pos_embed");
  if (tok.dim(1) != d || pos.dim(1) != d) {
    throw DimensionError("encode_text: embedding width does not match d_model");
  }

  Tensor x({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    if (tp.token_ids[i] >= tok.dim(0)) {
      throw ValidationError("encode_text: token id " + std::to_string(tp.token_ids[i]) +
                            " outside vocabulary");
    }
    if (tp.position_ids[i] >= pos.dim(0)) {
      throw CapacityError("encode_text: position " + std::to_string(tp.position_ids[i]) +
                          " exceeds position table of " + std::to_string(pos.dim(0)));
    }
    auto dst = x.row(i);
    auto e = tok.row(tp.token_ids[i]);
    auto p = pos.row(tp.position_ids[i]);
    for (std::size_t c = 0; c < d; ++c) dst[c] = e[c] + p[c];
  }

  for (std::size_t l = 0; l < cfg.text.layers; ++l) {
    const std::string p = "text.layer" + std::to_string(l);
    const Tensor h = layer_norm(x, norm_ref(ws, p + ".norm1"));
    add_inplace(x, multi_head_attention(h, h, h, attention_ref(ws, p + ".attn", cfg.text.heads),
                                        &tp.self_mask));
    add_inplace(x, feed_forward(layer_norm(x, norm_ref(ws, p + ".norm2")), ws, p + ".ffn"));
  }
  return {std::move(x), tp.phrase_spans};
}

}  // namespace gde
