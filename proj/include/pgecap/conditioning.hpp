#pragma once

// Prompt encoding and the cross-attention primitive used by the denoiser.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pgecap/ops.hpp"
#include "pgecap/random.hpp"

namespace pgecap {

struct Prompt {
  std::string text;

  explicit Prompt(std::string t) : text(std::move(t)) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw ConfigError("prompt must be non-empty");
    }
  }
};

/// (L tokens, d dims) conditioning array.
struct TextEmbedding {
  Tensor values;

  std::size_t tokens() const { return values.shape.at(0); }
  std::size_t dims() const { return values.shape.at(1); }

  /// All-zero token sequence used as the unconditional guidance branch.
  static TextEmbedding empty(std::size_t tokens, std::size_t dims) {
    return TextEmbedding{Tensor({tokens, dims}, 0.0)};
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic desk-scale text encoder: each whitespace token seeds a
/// pseudo-random unit vector. Short prompts are padded with a "<pad>" token,
/// long prompts are truncated to `tokens`.
inline TextEmbedding embed_prompt(const Prompt& prompt, std::size_t tokens, std::size_t dims,
                                  std::uint64_t seed) {
  if (tokens == 0 || dims == 0) throw ConfigError("embedding extents must be >= 1");
  std::vector<std::string> words;
  std::istringstream is(prompt.text);
  for (std::string w; is >> w;) words.push_back(std::move(w));

  Tensor values({tokens, dims});
  for (std::size_t i = 0; i < tokens; ++i) {
    const std::string& word = i < words.size() ? words[i] : std::string("<pad>");
    Rng rng(derive_seed(seed, {fnv1a64(word)}));
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dims; ++j) {
      const double v = rng.normal();
      values[i * dims + j] = v;
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < dims; ++j) values[i * dims + j] *= inv;
  }
  return TextEmbedding{std::move(values)};
}

/// Projection matrices of one single-head cross-attention layer.
struct AttentionWeights {
  Tensor w_q;  // (feature_dim, d)
  Tensor w_k;  // (text_dim, d)
  Tensor w_v;  // (text_dim, d)
  std::size_t d = 0;

  void validate(std::size_t feature_dim, std::size_t text_dim) const {
    if (d == 0) throw ShapeError("attention key dimension must be >= 1");
    if (w_q.shape != Shape{feature_dim, d} || w_k.shape != Shape{text_dim, d} ||
        w_v.shape != Shape{text_dim, d}) {
      throw ShapeError("attention weights inconsistent with features " +
                       std::to_string(feature_dim) + " / text " + std::to_string(text_dim));
    }
  }
};

struct CrossAttentionResult {
  ad::Var output;  // (num_queries, d)
  ad::Var map;     // (num_queries, L), rows on the probability simplex
};

/// map = softmax((F W_Q)(C W_K)^T / sqrt(d)), output = map (C W_V).
inline CrossAttentionResult cross_attention(ad::Var features, ad::Var text,
                                            const AttentionWeights& w) {
  if (features.shape().size() != 2 || text.shape().size() != 2) {
    throw ShapeError("cross_attention expects rank-2 features and text");
  }
  w.validate(features.shape()[1], text.shape()[1]);
  ad::Tape& tape = features.tape();
  auto q = ad::matmul(features, tape.constant(w.w_q));
  auto k = ad::matmul(text, tape.constant(w.w_k));
  auto v = ad::matmul(text, tape.constant(w.w_v));
  auto logits = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(w.d)));
  auto map = ad::softmax_rows(logits);
  return {ad::matmul(map, v), map};
}

/// Value-only overload.
inline std::pair<Tensor, Tensor> cross_attention(const Tensor& features, const TextEmbedding& text,
                                                 const AttentionWeights& w) {
  ad::Tape tape;
  auto r = cross_attention(tape.constant(features), tape.constant(text.values), w);
  return {r.output.value(), r.map.value()};
}

}  // namespace pgecap
