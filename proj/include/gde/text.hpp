// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gde/config.hpp"
#include "gde/tensor.hpp"
#include "gde/weights.hpp"

namespace gde {

enum class PromptMode { categories, caption };

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct Prompt {
  PromptMode mode = PromptMode::categories;
  std::vector<std::string> phrases;
  /// Rendered text: "cat. dog." in categories mode, the caption otherwise.
  std::string text;
  /// Character offsets of each phrase in `text`.
  std::vector<CharSpan> offsets;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

/// Categories-mode prompt. Entries are trimmed; an empty list or an entry
/// that is blank after trimming is a ValidationError.
Prompt assemble_prompt(std::span<const std::string> categories);

/// Caption-mode prompt over caller-supplied character spans.
Prompt caption_prompt(std::string caption, std::vector<CharSpan> spans);

/// Splits "a. b. c" on periods into a categories-mode prompt.
Prompt parse_category_text(std::string_view text);

/// Half-open token range.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct TokenizedPrompt {
  std::vector<std::uint32_t> token_ids;
  std::vector<TokenSpan> phrase_spans;
  Mask self_mask;
  std::vector<std::size_t> position_ids;

  std::size_t size() const noexcept { return token_ids.size(); }
  friend bool operator==(const TokenizedPrompt&, const TokenizedPrompt&) = default;
};

/// Lowercases and splits on anything that is not an ASCII letter or digit.
std::vector<std::string> split_words(std::string_view text);

std::uint32_t token_id(std::string_view word, std::size_t vocab_size);

TokenizedPrompt tokenize(const Prompt& prompt, std::size_t vocab_size);

/// mask[i][j] is true iff i and j fall in the same span.
Mask build_phrase_mask(std::span<const TokenSpan> spans, std::size_t length);

struct TextFeatures {
  Tensor features;  // [T, d_model]
  std::vector<TokenSpan> phrase_spans;

  std::size_t num_phrases() const noexcept { return phrase_spans.size(); }
  std::size_t num_tokens() const noexcept { return features.empty() ? 0 : features.dim(0); }
};

/// Token + per-phrase position embeddings followed by `cfg.text.layers`
/// pre-norm transformer layers restricted by the phrase mask.
TextFeatures encode_text(const TokenizedPrompt& tp, const WeightStore& ws, const ModelConfig& cfg);

}  // namespace gde
