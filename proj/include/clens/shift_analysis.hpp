#pragma once

// Concept shift vectors between an original model (a) and a fine-tuned model
// (b) observed on the same samples, shifted concepts u^s = u^a + alpha * Delta,
// and the consistency / concept-recovery diagnostics built on them.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "clens/concept_dictionary.hpp"
#include "clens/error.hpp"
#include "clens/grounding.hpp"
#include "clens/matching.hpp"
#include "clens/stats.hpp"
#include "clens/tensor_store.hpp"

namespace clens {

inline constexpr double kDefaultAlpha = 1.0;
inline const std::vector<double> kAlphaSweep = {0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};

struct ShiftSet {
  Matrix deltas;          // D x M, column m = b_m - a_m
  Matrix concept_shifts;  // D x K, column k = mean of deltas over A_k
  AssignmentSets assignments;  // from the original model's dictionary
  double alpha = kDefaultAlpha;
  std::vector<int> empty_concepts;  // concepts with |A_k| = 0 (zero shift)

  int concept_count() const { return static_cast<int>(concept_shifts.cols()); }
};

inline ShiftSet compute_shift_set(const HiddenStates& a, const HiddenStates& b, const AssignmentSets& assign) {
  a.validate();
  b.validate();
  require(a.dim() == b.dim() && a.samples() == b.samples(), errc::kDimMismatch,
          "states are " + std::to_string(a.dim()) + "x" + std::to_string(a.samples()) + " and " +
              std::to_string(b.dim()) + "x" + std::to_string(b.samples()));
  require(a.sample_ids == b.sample_ids, errc::kSampleMismatch, "both models must see the same samples in the same order");
  require(assign.sample_count == static_cast<std::size_t>(a.samples()), errc::kDimMismatch,
          "assignments cover " + std::to_string(assign.sample_count) + " samples, states have " +
              std::to_string(a.samples()));

  ShiftSet s;
  s.deltas = b.data - a.data;
  s.assignments = assign;
  s.concept_shifts = Matrix::Zero(a.dim(), assign.concept_count());
  for (int k = 0; k < assign.concept_count(); ++k) {
    const auto& members = assign.sets[static_cast<std::size_t>(k)];
    if (members.empty()) {
      s.empty_concepts.push_back(k);
      continue;
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(a.dim());
    for (auto m : members) sum += s.deltas.col(static_cast<Eigen::Index>(m)).cast<double>();
    s.concept_shifts.col(k) = (sum / static_cast<double>(members.size())).cast<float>();
  }
  return s;
}

/// u^s_k = u^a_k + alpha * Delta_k. alpha = 0 returns the input unchanged.
inline ConceptDictionary apply_shift(const ConceptDictionary& dict, const ShiftSet& shifts, double alpha) {
  require(std::isfinite(alpha), errc::kNonFinite, "alpha must be finite");
  require(dict.size() == shifts.concept_count(), errc::kInvalidArgument,
          "K mismatch: dictionary " + std::to_string(dict.size()) + ", shifts " + std::to_string(shifts.concept_count()));
  require(dict.dim() == shifts.concept_shifts.rows(), errc::kDimMismatch, "D mismatch between dictionary and shifts");
  ConceptDictionary out = dict;
  out.source.alpha = alpha;
  if (alpha == 0.0) return out;
  out.concepts = (dict.concepts.cast<double>() + alpha * shifts.concept_shifts.cast<double>()).cast<float>();
  return out;
}

/// Mean cosine between the member deltas of A_k and Delta_k.
inline double consistency(const ShiftSet& shifts, int k) {
  require(k >= 0 && k < shifts.concept_count(), errc::kInvalidArgument, "concept index out of range");
  const auto& members = shifts.assignments.sets[static_cast<std::size_t>(k)];
  require(!members.empty(), errc::kEmpty, "concept " + std::to_string(k) + " has no samples");
  const Eigen::VectorXd shift = shifts.concept_shifts.col(k).cast<double>();
  require(shift.squaredNorm() > 0.0, errc::kDegenerate, "concept " + std::to_string(k) + " has a zero shift vector");
  double total = 0.0;
  for (auto m : members) total += cosine(shifts.deltas.col(static_cast<Eigen::Index>(m)).cast<double>(), shift);
  return total / static_cast<double>(members.size());
}

struct RecoveryRecord {
  int concept_index = 0;
  int matched = -1;                   // m(k) in the fine-tuned dictionary
  std::optional<double> consistency;  // nullopt: empty set or zero shift
  std::optional<double> cr;           // nullopt: unmatched or cos(u^b, u^a) = 0
  double cos_tuned_original = 0.0;    // cos(u^b_{m(k)}, u^a_k)
  double cos_tuned_shifted = 0.0;     // cos(u^b_{m(k)}, u^s_k)
  std::optional<double> t_overlap_original;
  std::optional<double> t_overlap_shifted;
};

struct RecoveryReport {
  double alpha = kDefaultAlpha;
  std::vector<RecoveryRecord> records;
  std::optional<double> pearson;
  std::optional<double> spearman;
  std::size_t correlated = 0;          // records used in the correlation
  std::size_t excluded_undefined = 0;  // records with undefined CR or consistency

  double mean_cos_tuned_shifted() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : records)
      if (r.matched >= 0) s += r.cos_tuned_shifted, ++n;
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

/// CR_k = [cos(u^b_{m(k)}, u^s_k) - cos(u^b_{m(k)}, u^a_k)] / cos(u^b_{m(k)}, u^a_k)
/// per concept, plus Pearson/Spearman of consistency vs CR across concepts.
/// T-Overlaps are filled in when an unembedding is supplied.
inline RecoveryReport concept_recovery(const ConceptDictionary& orig, const ConceptDictionary& shifted,
                                       const ConceptDictionary& tuned, const Matching& match, const ShiftSet& shifts,
                                       const Unembedding* unembedding = nullptr, int n_grounding = kDefaultNGrounding) {
  require(match.mode == MatchMode::bijective, errc::kInvalidArgument, "concept recovery needs a bijective matching");
  require(orig.size() == shifted.size() && static_cast<int>(match.map.size()) == orig.size(), errc::kInvalidArgument,
          "original, shifted and matching must cover the same K");
  require(orig.dim() == shifted.dim() && orig.dim() == tuned.dim(), errc::kDimMismatch, "dictionaries differ in D");
  require(shifts.concept_count() == orig.size(), errc::kInvalidArgument, "shift set K differs from dictionary K");

  std::vector<TextGrounding> g_orig, g_shift, g_tuned;
  if (unembedding) {
    g_orig = text_grounding(orig, *unembedding, n_grounding);
    g_shift = text_grounding(shifted, *unembedding, n_grounding);
    g_tuned = text_grounding(tuned, *unembedding, n_grounding);
  }

  RecoveryReport report;
  report.alpha = shifted.source.alpha.value_or(shifts.alpha);
  std::vector<double> xs, ys;
  for (int k = 0; k < orig.size(); ++k) {
    RecoveryRecord r;
    r.concept_index = k;
    r.matched = match.map[static_cast<std::size_t>(k)];
    try {
      r.consistency = consistency(shifts, k);
    } catch (const Error&) {
      r.consistency.reset();
    }
    if (r.matched >= 0) {
      const Eigen::VectorXd ub = tuned.concepts.col(r.matched).cast<double>();
      r.cos_tuned_original = cosine(ub, orig.concepts.col(k).cast<double>());
      r.cos_tuned_shifted = cosine(ub, shifted.concepts.col(k).cast<double>());
      if (r.cos_tuned_original != 0.0)
        r.cr = (r.cos_tuned_shifted - r.cos_tuned_original) / r.cos_tuned_original;
      if (unembedding) {
        const auto& target = g_tuned[static_cast<std::size_t>(r.matched)];
        r.t_overlap_original = t_overlap(g_orig[static_cast<std::size_t>(k)], target);
        r.t_overlap_shifted = t_overlap(g_shift[static_cast<std::size_t>(k)], target);
      }
    }
    if (r.cr && r.consistency) {
      xs.push_back(*r.consistency);
      ys.push_back(*r.cr);
    } else {
      ++report.excluded_undefined;
    }
    report.records.push_back(r);
  }
  report.correlated = xs.size();
  report.pearson = stats::pearson(xs, ys);
  report.spearman = stats::spearman(xs, ys);
  return report;
}

struct DriftPoint {
  std::size_t checkpoint = 0;
  std::vector<int> matched;           // greedy m(i) per original concept
  std::vector<double> cosine;         // cos(u^a_i, u^c_{m(i)})
  std::vector<double> t_overlap;      // empty without an unembedding
  double mean_cosine = 0.0;
  std::optional<double> mean_t_overlap;
};

/// Per checkpoint: greedy-match each original concept and record its cosine
/// and T-Overlap with the match.
inline std::vector<DriftPoint> drift_curve(const ConceptDictionary& orig, const std::vector<ConceptDictionary>& checkpoints,
                                           const Unembedding* unembedding = nullptr,
                                           int n_grounding = kDefaultNGrounding) {
  std::vector<TextGrounding> g_orig;
  if (unembedding) g_orig = text_grounding(orig, *unembedding, n_grounding);
  std::vector<DriftPoint> curve;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const ConceptDictionary& ck = checkpoints[c];
    require(ck.dim() == orig.dim(), errc::kDimMismatch, "checkpoint " + std::to_string(c) + " differs in D");
    const Matching m = greedy_match(similarity(orig, ck));
    DriftPoint p;
    p.checkpoint = c;
    p.matched = m.map;
    p.cosine = m.similarity;
    p.mean_cosine = stats::mean(p.cosine);
    if (unembedding) {
      const auto g_ck = text_grounding(ck, *unembedding, n_grounding);
      for (std::size_t i = 0; i < m.map.size(); ++i)
        p.t_overlap.push_back(t_overlap(g_orig[i], g_ck[static_cast<std::size_t>(m.map[i])]));
      p.mean_t_overlap = stats::mean(p.t_overlap);
    }
    curve.push_back(std::move(p));
  }
  return curve;
}

}  // namespace clens
