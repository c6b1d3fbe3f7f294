#pragma once

// Text grounding (vocabulary projection of a concept through W_U), image
// grounding (maximum-activating samples) and the T-Overlap between two text
// groundings.

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "clens/concept_dictionary.hpp"
#include "clens/error.hpp"
#include "clens/tensor_store.hpp"

namespace clens {

inline constexpr int kDefaultNGrounding = 15;
inline constexpr int kDefaultNMas = 5;

struct TextGrounding {
  int concept_index = 0;
  std::vector<std::string> words;
  std::vector<double> logits;  // non-increasing
};

struct ImageGrounding {
  int concept_index = 0;
  std::vector<std::string> sample_ids;
  std::vector<double> activations;  // |v_k|, non-increasing
};

/// Strips surrounding whitespace and SentencePiece/BPE word markers
/// (U+2581 "▁", U+0120 "Ġ"). Case is preserved.
inline std::string normalize_token(std::string_view token) {
  static constexpr std::string_view kMarkers[] = {"\xE2\x96\x81", "\xC4\xA0"};
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  bool changed = true;
  while (changed && !token.empty()) {
    changed = false;
    while (!token.empty() && is_space(token.front())) token.remove_prefix(1), changed = true;
    while (!token.empty() && is_space(token.back())) token.remove_suffix(1), changed = true;
    for (auto marker : kMarkers) {
      if (token.starts_with(marker)) token.remove_prefix(marker.size()), changed = true;
      if (token.ends_with(marker)) token.remove_suffix(marker.size()), changed = true;
    }
  }
  return std::string(token);
}

namespace detail {

// Indices of the n largest scores, descending; ties to the lower index.
inline std::vector<std::size_t> top_n(const std::vector<double>& scores, std::size_t n) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), before);
  idx.resize(n);
  return idx;
}

}  // namespace detail

/// Top-n vocabulary words of W_U u_k for every concept.
inline std::vector<TextGrounding> text_grounding(const ConceptDictionary& dict, const Unembedding& u, int n) {
  require(u.matrix.cols() == dict.dim(), errc::kDimMismatch,
          "unembedding D=" + std::to_string(u.matrix.cols()) + ", dictionary D=" + std::to_string(dict.dim()));
  require(static_cast<Eigen::Index>(u.vocab.size()) == u.matrix.rows(), errc::kDimMismatch,
          "vocab size != unembedding rows");
  require(n >= 1 && static_cast<std::size_t>(n) <= u.vocab.size(), errc::kInvalidArgument,
          "n_grounding=" + std::to_string(n) + " outside [1, " + std::to_string(u.vocab.size()) + "]");
  const Eigen::MatrixXd logits = u.matrix.cast<double>() * dict.concepts.cast<double>();  // |Y| x K
  std::vector<TextGrounding> out;
  out.reserve(static_cast<std::size_t>(dict.size()));
  for (int k = 0; k < dict.size(); ++k) {
    std::vector<double> col(logits.col(k).data(), logits.col(k).data() + logits.rows());
    TextGrounding g;
    g.concept_index = k;
    for (std::size_t y : detail::top_n(col, static_cast<std::size_t>(n))) {
      g.words.push_back(u.vocab[y]);
      g.logits.push_back(col[y]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// The n samples with the largest |v_k|, descending; ties in dataset order.
inline ImageGrounding image_grounding(const ActivationMatrix& v, int k, int n) {
  require(k >= 0 && k < v.concept_count(), errc::kInvalidArgument, "concept index " + std::to_string(k) + " out of range");
  require(n >= 1 && n <= v.values.cols(), errc::kInvalidArgument,
          "n_mas=" + std::to_string(n) + " outside [1, " + std::to_string(v.values.cols()) + "]");
  std::vector<double> act(static_cast<std::size_t>(v.values.cols()));
  for (Eigen::Index m = 0; m < v.values.cols(); ++m) act[static_cast<std::size_t>(m)] = std::abs(double{v.values(k, m)});
  ImageGrounding g;
  g.concept_index = k;
  for (std::size_t m : detail::top_n(act, static_cast<std::size_t>(n))) {
    g.sample_ids.push_back(m < v.sample_ids.size() ? v.sample_ids[m] : std::to_string(m));
    g.activations.push_back(act[m]);
  }
  return g;
}

/// 100 * |T(g1) ∩ T(g2)| / |T(g1)| over normalized, deduplicated words.
/// Asymmetric: the denominator belongs to the first argument.
inline double t_overlap(const TextGrounding& g1, const TextGrounding& g2) {
  auto word_set = [](const TextGrounding& g) {
    std::set<std::string> s;
    for (const auto& w : g.words) {
      std::string t = normalize_token(w);
      if (!t.empty()) s.insert(std::move(t));
    }
    return s;
  };
  const auto a = word_set(g1);
  const auto b = word_set(g2);
  require(!a.empty() && !b.empty(), errc::kEmpty, "grounding has no words");
  std::size_t shared = 0;
  for (const auto& w : a) shared += b.count(w);
  return 100.0 * static_cast<double>(shared) / static_cast<double>(a.size());
}

}  // namespace clens
