#pragma once

// Concept dictionaries: Z (D x M) ~ U (D x K) V (K x M) learned by K-means.
// U holds the centroids; V is the hard one-hot cluster membership.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "clens/error.hpp"
#include "clens/parallel.hpp"
#include "clens/random.hpp"
#include "clens/tensor_store.hpp"

namespace clens {

struct DictionarySource {
  std::string model_id;
  std::string dataset_id;
  std::string token_of_interest;
  int layer = 0;
  std::string manifest_digest;
  std::uint64_t seed = 0;
  // Set when the dictionary was produced by shifting another one.
  std::optional<double> alpha;
};

struct ConceptDictionary {
  Matrix concepts;  // D x K, column k = u_k
  double inertia = 0.0;
  DictionarySource source;

  Eigen::Index dim() const { return concepts.rows(); }
  int size() const { return static_cast<int>(concepts.cols()); }
};

struct ActivationMatrix {
  Matrix values;  // K x M
  std::vector<std::string> sample_ids;

  int concept_count() const { return static_cast<int>(values.rows()); }
};

struct AssignmentSets {
  std::vector<std::vector<std::size_t>> sets;  // sets[k] = sample indices, ascending
  std::size_t sample_count = 0;

  int concept_count() const { return static_cast<int>(sets.size()); }
};

struct KMeansOptions {
  int k = 20;
  std::uint64_t seed = 0;
  int max_iter = 300;
  // Independent k-means++ restarts; the lowest final inertia wins.
  int n_init = 10;
};

struct FitResult {
  ConceptDictionary dictionary;
  ActivationMatrix activations;
  std::vector<int> labels;
  // Objective after every centroid update of the winning restart.
  std::vector<double> inertia_history;
  int iterations = 0;
};

namespace kmeans_detail {

using MatD = Eigen::MatrixXd;

inline double sq_dist(const MatD& points, Eigen::Index m, const MatD& centers, Eigen::Index k) {
  return (points.col(m) - centers.col(k)).squaredNorm();
}

// Nearest center per column; ties go to the lowest index.
inline void assign(const MatD& points, const MatD& centers, std::vector<int>& labels, std::vector<double>& dists) {
  const Eigen::Index m_count = points.cols();
  labels.resize(static_cast<std::size_t>(m_count));
  dists.resize(static_cast<std::size_t>(m_count));
  parallel_for(static_cast<std::size_t>(m_count), [&](std::size_t m) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < centers.cols(); ++k) {
      const double d = sq_dist(points, static_cast<Eigen::Index>(m), centers, k);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    labels[m] = best;
    dists[m] = best_d;
  });
}

inline double objective(const MatD& points, const MatD& centers, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index m = 0; m < points.cols(); ++m)
    total += sq_dist(points, m, centers, labels[static_cast<std::size_t>(m)]);
  return total;
}

inline std::size_t distinct_columns(const MatD& points, std::size_t stop_at) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(points.cols()));
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index d = 0; d < points.rows(); ++d) {
      if (points(d, a) != points(d, b)) return points(d, a) < points(d, b);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  std::size_t distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size() && distinct < stop_at; ++i)
    if (less(order[i - 1], order[i])) ++distinct;
  return distinct;
}

inline MatD plus_plus_init(const MatD& points, int k, Rng& rng) {
  const Eigen::Index m_count = points.cols();
  MatD centers(points.rows(), k);
  centers.col(0) = points.col(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(m_count))));
  std::vector<double> d2(static_cast<std::size_t>(m_count));
  for (Eigen::Index m = 0; m < m_count; ++m) d2[static_cast<std::size_t>(m)] = sq_dist(points, m, centers, 0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = -1;
      for (Eigen::Index m = 0; m < m_count; ++m) {
        acc += d2[static_cast<std::size_t>(m)];
        if (acc > r && d2[static_cast<std::size_t>(m)] > 0.0) {
          pick = m;
          break;
        }
      }
      if (pick < 0) {  // r landed on the rounding tail
        for (Eigen::Index m = m_count - 1; m >= 0; --m)
          if (d2[static_cast<std::size_t>(m)] > 0.0) {
            pick = m;
            break;
          }
      }
    }
    centers.col(c) = points.col(pick);
    for (Eigen::Index m = 0; m < m_count; ++m)
      d2[static_cast<std::size_t>(m)] = std::min(d2[static_cast<std::size_t>(m)], sq_dist(points, m, centers, c));
  }
  return centers;
}

// Centroids of the current labels. An empty cluster takes over the point that
// is farthest from its own centroid (among clusters that can spare one).
inline MatD update_centers(const MatD& points, const MatD& previous, std::vector<int>& labels, int k) {
  const Eigen::Index m_count = points.cols();
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] != 0) continue;
    Eigen::Index far = -1;
    double far_d = -1.0;
    for (Eigen::Index m = 0; m < m_count; ++m) {
      const int l = labels[static_cast<std::size_t>(m)];
      if (counts[static_cast<std::size_t>(l)] < 2) continue;
      const double d = sq_dist(points, m, previous, l);
      if (d > far_d) {
        far_d = d;
        far = m;
      }
    }
    if (far < 0) fail(errc::kInsufficientDiversity, "cannot repair empty cluster");
    --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
    labels[static_cast<std::size_t>(far)] = c;
    counts[static_cast<std::size_t>(c)] = 1;
  }
  MatD centers = MatD::Zero(points.rows(), k);
  for (Eigen::Index m = 0; m < m_count; ++m) centers.col(labels[static_cast<std::size_t>(m)]) += points.col(m);
  for (int c = 0; c < k; ++c) centers.col(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  return centers;
}

struct Run {
  MatD centers;
  std::vector<double> history;
  int iterations = 0;
};

// Hartigan single-point moves: relocate x from cluster a to b whenever
//   |B| / (|B| + 1) * |x - mu_b|^2 < |A| / (|A| - 1) * |x - mu_a|^2,
// updating both means in place. Each move strictly lowers the objective and
// escapes some Lloyd fixed points. Returns true if any point moved.
inline bool hartigan_pass(const MatD& points, MatD& centers, std::vector<int>& labels, int k) {
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (int l : labels) counts[static_cast<std::size_t>(l)] += 1.0;
  bool moved = false;
  for (Eigen::Index m = 0; m < points.cols(); ++m) {
    const int a = labels[static_cast<std::size_t>(m)];
    const double na = counts[static_cast<std::size_t>(a)];
    if (na < 2.0) continue;
    const double cost_out = na / (na - 1.0) * sq_dist(points, m, centers, a);
    int best = a;
    double best_gain = 0.0;
    for (int b = 0; b < k; ++b) {
      if (b == a) continue;
      const double nb = counts[static_cast<std::size_t>(b)];
      const double gain = cost_out - nb / (nb + 1.0) * sq_dist(points, m, centers, b);
      // Relative margin keeps rounding noise from triggering moves.
      if (gain > best_gain && gain > 1e-12 * cost_out) {
        best_gain = gain;
        best = b;
      }
    }
    if (best == a) continue;
    const double nb = counts[static_cast<std::size_t>(best)];
    centers.col(a) = (centers.col(a) * na - points.col(m)) / (na - 1.0);
    centers.col(best) = (centers.col(best) * nb + points.col(m)) / (nb + 1.0);
    counts[static_cast<std::size_t>(a)] -= 1.0;
    counts[static_cast<std::size_t>(best)] += 1.0;
    labels[static_cast<std::size_t>(m)] = best;
    moved = true;
  }
  return moved;
}

// Lloyd iterations to a fixed point, then Hartigan passes; repeated until
// neither changes the labels or max_iter centroid updates have been spent.
inline Run lloyd(const MatD& points, int k, int max_iter, Rng& rng) {
  Run run;
  MatD centers = plus_plus_init(points, k, rng);
  std::vector<int> labels;
  std::vector<double> dists;
  assign(points, centers, labels, dists);
  while (run.iterations < max_iter) {
    centers = update_centers(points, centers, labels, k);
    run.history.push_back(objective(points, centers, labels));
    ++run.iterations;
    std::vector<int> next;
    assign(points, centers, next, dists);
    if (next != labels) {
      labels = std::move(next);
      continue;
    }
    if (!hartigan_pass(points, centers, labels, k)) break;
  }
  run.centers = std::move(centers);
  return run;
}

}  // namespace kmeans_detail

/// Nearest-centroid one-hot activations (Euclidean; ties to the lowest index).
inline ActivationMatrix project(const HiddenStates& h, const ConceptDictionary& dict) {
  require(h.dim() == dict.dim(), errc::kDimMismatch,
          "states D=" + std::to_string(h.dim()) + ", dictionary D=" + std::to_string(dict.dim()));
  require(dict.size() >= 1, errc::kInvalidArgument, "empty dictionary");
  const Eigen::MatrixXd points = h.data.cast<double>();
  const Eigen::MatrixXd centers = dict.concepts.cast<double>();
  std::vector<int> labels;
  std::vector<double> dists;
  kmeans_detail::assign(points, centers, labels, dists);
  ActivationMatrix v;
  v.values = Matrix::Zero(dict.size(), h.samples());
  for (Eigen::Index m = 0; m < h.samples(); ++m) v.values(labels[static_cast<std::size_t>(m)], m) = 1.0f;
  v.sample_ids = h.sample_ids;
  return v;
}

/// A_k = { m : k = argmax_i |v_i(x_m)| }, ties to the lowest index.
inline AssignmentSets assignments(const ActivationMatrix& v) {
  AssignmentSets a;
  a.sets.resize(static_cast<std::size_t>(v.values.rows()));
  a.sample_count = static_cast<std::size_t>(v.values.cols());
  for (Eigen::Index m = 0; m < v.values.cols(); ++m) {
    Eigen::Index best = 0;
    float best_abs = -1.0f;
    for (Eigen::Index k = 0; k < v.values.rows(); ++k) {
      const float x = std::abs(v.values(k, m));
      if (x > best_abs) {
        best_abs = x;
        best = k;
      }
    }
    if (v.values.rows() > 0) a.sets[static_cast<std::size_t>(best)].push_back(static_cast<std::size_t>(m));
  }
  return a;
}

/// Labels per sample derived from assignment sets.
inline std::vector<int> labels_of(const AssignmentSets& a) {
  std::vector<int> labels(a.sample_count, -1);
  for (std::size_t k = 0; k < a.sets.size(); ++k)
    for (auto m : a.sets[k]) labels[m] = static_cast<int>(k);
  return labels;
}

inline double inertia_of(const Matrix& data, const Matrix& centers, const std::vector<int>& labels) {
  return kmeans_detail::objective(data.cast<double>(), centers.cast<double>(), labels);
}

/// K-means concept dictionary. Deterministic for a given seed regardless of
/// CLENS_THREADS.
inline FitResult fit_dictionary(const HiddenStates& h, const KMeansOptions& opt) {
  h.validate();
  const Eigen::Index m_count = h.samples();
  require(opt.k >= 1, errc::kInvalidArgument, "K must be >= 1");
  require(opt.k <= m_count, errc::kInvalidArgument,
          "K=" + std::to_string(opt.k) + " exceeds M=" + std::to_string(m_count));
  require(opt.max_iter >= 1, errc::kInvalidArgument, "max_iter must be >= 1");
  require(opt.n_init >= 1, errc::kInvalidArgument, "n_init must be >= 1");

  const Eigen::MatrixXd points = h.data.cast<double>();
  const auto k = static_cast<std::size_t>(opt.k);
  if (k > 1 && kmeans_detail::distinct_columns(points, k) < k)
    fail(errc::kInsufficientDiversity,
         "fewer than K=" + std::to_string(opt.k) + " distinct samples");

  FitResult best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opt.n_init; ++r) {
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(r)));
    kmeans_detail::Run run = kmeans_detail::lloyd(points, opt.k, opt.max_iter, rng);

    // Final activations come from the stored f32 centroids so that
    // project() on the training data reproduces them exactly.
    ConceptDictionary dict;
    dict.concepts = run.centers.cast<float>();
    ActivationMatrix act = project(h, dict);
    std::vector<int> labels = labels_of(assignments(act));
    dict.inertia = inertia_of(h.data, dict.concepts, labels);
    if (dict.inertia < best_inertia) {
      best_inertia = dict.inertia;
      best.dictionary = std::move(dict);
      best.activations = std::move(act);
      best.labels = std::move(labels);
      best.inertia_history = std::move(run.history);
      best.iterations = run.iterations;
    }
  }
  auto& src = best.dictionary.source;
  src.model_id = h.model_id;
  src.dataset_id = h.dataset_id;
  src.token_of_interest = h.token_of_interest;
  src.layer = h.layer;
  src.seed = opt.seed;
  return best;
}

// ---------------------------------------------------------------------------
// Persistence: <stem>.npy (D x K) + <stem>.json sidecar.

inline Json dictionary_sidecar(const ConceptDictionary& d) {
  Json j;
  j["K"] = d.size();
  j["D"] = d.dim();
  j["seed"] = d.source.seed;
  j["inertia"] = d.inertia;
  j["source"] = {{"model_id", d.source.model_id},
                 {"dataset_id", d.source.dataset_id},
                 {"token_of_interest", d.source.token_of_interest},
                 {"layer", d.source.layer},
                 {"manifest_digest", d.source.manifest_digest}};
  if (d.source.alpha) j["alpha"] = *d.source.alpha;
  return j;
}

inline void save_dictionary(const ConceptDictionary& d, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  save_matrix(d.concepts, dir / (stem + ".npy"));
  write_json(dictionary_sidecar(d), dir / (stem + ".json"));
}

inline ConceptDictionary load_dictionary(const fs::path& npy_path) {
  ConceptDictionary d;
  d.concepts = load_matrix(npy_path);
  fs::path sidecar = npy_path;
  sidecar.replace_extension(".json");
  if (fs::exists(sidecar)) {
    const Json j = read_json(sidecar);
    require(j.value("K", -1) == d.size(), errc::kDimMismatch, "sidecar K disagrees with matrix");
    d.inertia = j.value("inertia", 0.0);
    d.source.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("source")) {
      const Json& s = j["source"];
      d.source.model_id = s.value("model_id", "");
      d.source.dataset_id = s.value("dataset_id", "");
      d.source.token_of_interest = s.value("token_of_interest", "");
      d.source.layer = s.value("layer", 0);
      d.source.manifest_digest = s.value("manifest_digest", "");
    }
    if (j.contains("alpha")) d.source.alpha = j["alpha"].get<double>();
  }
  return d;
}

}  // namespace clens
