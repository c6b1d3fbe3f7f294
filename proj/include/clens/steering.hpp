#pragma once

// Steering vectors: coarse (difference of set means), fine-grained (concept to
// concept), their application to stored hidden states, and selection of the
// directions whose answer-count changes separate most cleanly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "clens/concept_dictionary.hpp"
#include "clens/error.hpp"
#include "clens/eval_text.hpp"
#include "clens/matching.hpp"
#include "clens/parallel.hpp"
#include "clens/tensor_store.hpp"

namespace clens {

enum class SteeringKind { coarse, fine };

// Which token positions a live intervention should touch. Stored as a
// recommendation for whoever applies the vector inside a model.
enum class ApplyTo { all_tokens, text_tokens, generated, prev_and_generated };

inline const char* to_string(SteeringKind k) { return k == SteeringKind::coarse ? "coarse" : "fine"; }

inline const char* to_string(ApplyTo a) {
  switch (a) {
    case ApplyTo::all_tokens: return "all_tokens";
    case ApplyTo::text_tokens: return "text_tokens";
    case ApplyTo::generated: return "generated";
    case ApplyTo::prev_and_generated: return "prev_and_generated";
  }
  return "all_tokens";
}

inline ApplyTo parse_apply_to(const std::string& s) {
  for (auto a : {ApplyTo::all_tokens, ApplyTo::text_tokens, ApplyTo::generated, ApplyTo::prev_and_generated})
    if (s == to_string(a)) return a;
  fail(errc::kInvalidArgument, "unknown apply_to '" + s + "'");
}

inline SteeringKind parse_steering_kind(const std::string& s) {
  if (s == "coarse") return SteeringKind::coarse;
  if (s == "fine") return SteeringKind::fine;
  fail(errc::kInvalidArgument, "unknown steering kind '" + s + "'");
}

struct SteeringVector {
  Vector direction;
  double alpha = 1.0;
  int layer = 0;
  SteeringKind kind = SteeringKind::coarse;
  std::string source_id;  // coarse: set ids
  std::string target_id;
  int src_concept = -1;   // fine: concept indices
  int dst_concept = -1;
  ApplyTo apply_to = ApplyTo::all_tokens;

  std::string id() const {
    if (kind == SteeringKind::fine) return "s_" + std::to_string(src_concept) + "_" + std::to_string(dst_concept);
    return "s_c:" + source_id + "->" + target_id;
  }

  void validate() const {
    require(direction.size() > 0, errc::kEmpty, "steering direction is empty");
    require(direction.allFinite(), errc::kNonFinite, "steering direction contains NaN/Inf");
    require(std::isfinite(alpha), errc::kNonFinite, "steering alpha must be finite");
    if (kind == SteeringKind::fine)
      require(src_concept >= 0 && dst_concept >= 0, errc::kInvalidArgument, "fine vector needs both concept indices");
  }
};

namespace detail {

inline Eigen::VectorXd column_mean(const Matrix& m) {
  return m.cast<double>().rowwise().sum() / static_cast<double>(m.cols());
}

}  // namespace detail

/// s_c = mean(target) - mean(source).
inline SteeringVector coarse_vector(const HiddenStates& target, const HiddenStates& source, int layer) {
  require(target.samples() > 0 && source.samples() > 0, errc::kEmpty, "coarse vector needs non-empty sets");
  require(target.dim() == source.dim(), errc::kDimMismatch,
          "target D=" + std::to_string(target.dim()) + ", source D=" + std::to_string(source.dim()));
  require(target.data.allFinite() && source.data.allFinite(), errc::kNonFinite, "hidden states contain NaN/Inf");
  SteeringVector v;
  v.kind = SteeringKind::coarse;
  v.layer = layer;
  v.source_id = source.dataset_id.empty() ? "source" : source.dataset_id;
  v.target_id = target.dataset_id.empty() ? "target" : target.dataset_id;
  v.direction = (detail::column_mean(target.data) - detail::column_mean(source.data)).cast<float>();
  return v;
}

inline SteeringVector fine_vector(const ConceptDictionary& dict, int i, int j, int layer) {
  SteeringVector v;
  v.kind = SteeringKind::fine;
  v.layer = layer;
  v.src_concept = i;
  v.dst_concept = j;
  v.direction = dict.concepts.col(j) - dict.concepts.col(i);
  return v;
}

/// All K(K-1) ordered pairs s_ij = u_j - u_i, row-major in (i, j).
inline std::vector<SteeringVector> fine_vectors(const ConceptDictionary& dict, int layer) {
  require(dict.size() >= 2, errc::kInvalidArgument, "fine vectors need K >= 2");
  std::vector<SteeringVector> out;
  out.reserve(static_cast<std::size_t>(dict.size() * (dict.size() - 1)));
  for (int i = 0; i < dict.size(); ++i)
    for (int j = 0; j < dict.size(); ++j)
      if (i != j) out.push_back(fine_vector(dict, i, j, layer));
  return out;
}

/// Every column shifted by alpha * direction. alpha = 0 returns an exact copy.
inline HiddenStates apply_steering(const HiddenStates& h, const SteeringVector& v, double alpha) {
  require(std::isfinite(alpha), errc::kNonFinite, "alpha must be finite");
  require(v.direction.size() == h.dim(), errc::kDimMismatch,
          "vector D=" + std::to_string(v.direction.size()) + ", states D=" + std::to_string(h.dim()));
  HiddenStates out = h;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", alpha);
  out.interventions.push_back("steer " + v.id() + " alpha=" + buf + " layer=" + std::to_string(v.layer));
  if (alpha == 0.0) return out;
  const Eigen::VectorXd step = alpha * v.direction.cast<double>();
  out.data = (h.data.cast<double>().colwise() + step).cast<float>();
  return out;
}

// ---------------------------------------------------------------------------
// Direction selection.

struct DirectionScore {
  std::size_t vector_index = 0;
  std::string vector_id;
  std::vector<std::pair<std::string, double>> top_deltas;  // descending
  std::vector<std::string> primary_answers;
  double score = 0.0;
  bool degenerate = false;
};

struct TwoMeans {
  std::size_t split = 0;  // values sorted descending; clusters are [0, split) and [split, n)
  double sse = 0.0;
};

/// Exact 1-D 2-means: in one dimension an optimal clustering is contiguous in
/// sorted order, so scanning all n-1 split points is exhaustive. Ties go to
/// the first split.
inline TwoMeans two_means_1d(const std::vector<double>& sorted_desc) {
  const std::size_t n = sorted_desc.size();
  require(n >= 2, errc::kInvalidArgument, "2-means needs at least two values");
  auto sse = [&](std::size_t lo, std::size_t hi) {
    double mean = 0.0;
    for (std::size_t i = lo; i < hi; ++i) mean += sorted_desc[i];
    mean /= static_cast<double>(hi - lo);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += (sorted_desc[i] - mean) * (sorted_desc[i] - mean);
    return s;
  };
  TwoMeans best{1, std::numeric_limits<double>::infinity()};
  for (std::size_t s = 1; s < n; ++s) {
    const double total = sse(0, s) + sse(s, n);
    if (total < best.sse) best = {s, total};
  }
  return best;
}

inline DirectionScore score_direction(const std::map<std::string, double>& deltas, std::size_t top_n) {
  std::vector<std::pair<std::string, double>> items(deltas.begin(), deltas.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (items.size() > top_n) items.resize(top_n);

  DirectionScore ds;
  ds.top_deltas = items;
  std::vector<double> values;
  for (const auto& it : items) values.push_back(it.second);
  std::vector<double> distinct = values;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) {
    ds.degenerate = true;
    return ds;
  }
  const TwoMeans tm = two_means_1d(values);
  const std::size_t n = values.size();
  const double top_total = std::accumulate(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(tm.split), 0.0);
  const double bottom_total = std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(tm.split), values.end(), 0.0);
  const double top_mean = top_total / static_cast<double>(tm.split);
  const double bottom_mean = bottom_total / static_cast<double>(n - tm.split);
  const bool top_primary = top_total >= bottom_total;
  const std::size_t lo = top_primary ? 0 : tm.split;
  const std::size_t hi = top_primary ? tm.split : n;
  for (std::size_t i = lo; i < hi; ++i) ds.primary_answers.push_back(items[i].first);
  ds.score = top_primary ? top_mean - bottom_mean : bottom_mean - top_mean;
  return ds;
}

/// Ranks candidate vectors by how sharply their answer-count changes split
/// into two groups. steered[i] holds the counts observed with candidates[i].
inline std::vector<DirectionScore> select_directions(const std::vector<SteeringVector>& candidates,
                                                     const AnswerCounts& baseline,
                                                     const std::vector<AnswerCounts>& steered, int top_n) {
  require(top_n >= 2, errc::kInvalidArgument, "top_n must be >= 2");
  require(candidates.size() == steered.size(), errc::kInvalidArgument,
          std::to_string(candidates.size()) + " candidates but " + std::to_string(steered.size()) + " count maps");
  std::vector<DirectionScore> scores(candidates.size());
  parallel_for(
      candidates.size(),
      [&](std::size_t i) {
        scores[i] = score_direction(answer_deltas(baseline, steered[i]), static_cast<std::size_t>(top_n));
        scores[i].vector_index = i;
        scores[i].vector_id = candidates[i].id();
      },
      1);
  std::stable_sort(scores.begin(), scores.end(),
                   [](const DirectionScore& a, const DirectionScore& b) { return a.score > b.score; });
  return scores;
}

/// One vector per gendered concept toward its most similar neutral concept
/// (ties to the lowest neutral index).
inline std::vector<SteeringVector> debias_mapping(const ConceptDictionary& gendered, const ConceptDictionary& neutral,
                                                  int layer) {
  require(gendered.size() > 0 && neutral.size() > 0, errc::kEmpty, "debias mapping needs non-empty dictionaries");
  const Matching m = greedy_match(similarity(gendered, neutral));
  std::vector<SteeringVector> out;
  for (int i = 0; i < gendered.size(); ++i) {
    const int j = m.map[static_cast<std::size_t>(i)];
    SteeringVector v;
    v.kind = SteeringKind::fine;
    v.layer = layer;
    v.src_concept = i;
    v.dst_concept = j;
    v.source_id = "gendered";
    v.target_id = "neutral";
    v.direction = neutral.concepts.col(j) - gendered.concepts.col(i);
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: <stem>.npy (D) + <stem>.json sidecar.

inline Json steering_sidecar(const SteeringVector& v) {
  Json j;
  j["kind"] = to_string(v.kind);
  j["alpha"] = v.alpha;
  j["layer"] = v.layer;
  j["D"] = v.direction.size();
  Json prov;
  if (v.kind == SteeringKind::fine) {
    prov["src_concept"] = v.src_concept;
    prov["dst_concept"] = v.dst_concept;
  }
  if (!v.source_id.empty()) prov["source_set"] = v.source_id;
  if (!v.target_id.empty()) prov["target_set"] = v.target_id;
  j["provenance"] = prov;
  j["apply_to"] = to_string(v.apply_to);
  j["layer_guidance"] = {{"vqa", "last"}, {"captioning", 20}};
  return j;
}

inline void save_steering(const SteeringVector& v, const fs::path& dir, const std::string& stem) {
  v.validate();
  fs::create_directories(dir);
  save_vector(v.direction, dir / (stem + ".npy"));
  write_json(steering_sidecar(v), dir / (stem + ".json"));
}

inline SteeringVector load_steering(const fs::path& npy_path) {
  SteeringVector v;
  v.direction = load_vector(npy_path);
  fs::path sidecar = npy_path;
  sidecar.replace_extension(".json");
  const Json j = read_json(sidecar);
  v.kind = parse_steering_kind(j.at("kind").get<std::string>());
  v.alpha = j.value("alpha", 1.0);
  v.layer = j.value("layer", 0);
  v.apply_to = parse_apply_to(j.value("apply_to", std::string("all_tokens")));
  require(j.value("D", Json::number_integer_t{-1}) == v.direction.size(), errc::kDimMismatch,
          "sidecar D disagrees with vector");
  const Json prov = j.value("provenance", Json::object());
  v.src_concept = prov.value("src_concept", -1);
  v.dst_concept = prov.value("dst_concept", -1);
  v.source_id = prov.value("source_set", "");
  v.target_id = prov.value("target_set", "");
  v.validate();
  return v;
}

}  // namespace clens
