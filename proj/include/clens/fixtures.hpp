#pragma once

// Synthetic paired worlds. The original model's states are Gaussian clusters
// around centers mu_k; the fine-tuned model sees the same samples translated
// by a per-cluster t_k (orthogonal to mu_k) plus optional drift noise.
//
// Drift noise pushes sample m of cluster k toward the fine-tuned center of a
// random other cluster j:
//   eps_m = sigma_k * |t_k| * |g_m| * unit(c^B_j - c^B_k),   g_m ~ N(0, 1)
// so a large sigma_k scatters the member shifts of cluster k (low
// consistency) and also drags its fine-tuned centroid away from mu_k + t_k.

#include <Eigen/Dense>

#include <cstdio>
#include <string>
#include <vector>

#include "clens/error.hpp"
#include "clens/random.hpp"
#include "clens/tensor_store.hpp"

namespace clens {

struct FixtureSpec {
  int dim = 32;
  int samples = 400;
  int clusters = 8;
  // Per-cluster noise scale sigma_k ~ U[noise_lo, noise_hi], relative to |t_k|.
  double noise_lo = 0.0;
  double noise_hi = 0.0;
  double translation_scale = 10.0;  // |t_k|
  double center_offset = 60.0;      // norm of the offset shared by all centers
  double cluster_radius = 8.0;      // |mu_k - offset|
  double spread = 1.0;              // within-cluster std per coordinate
  int vocab_factor = 2;             // |Y| = vocab_factor * D
  int checkpoints = 0;              // intermediate fine-tuning snapshots
  std::uint64_t seed = 0;

  void validate() const {
    require(dim >= 1 && samples >= 1 && clusters >= 1, errc::kInvalidArgument, "D, M, K_true must be positive");
    require(clusters <= samples, errc::kInvalidArgument,
            "K_true=" + std::to_string(clusters) + " exceeds M=" + std::to_string(samples));
    require(noise_lo >= 0.0 && noise_hi >= noise_lo, errc::kInvalidArgument, "need 0 <= noise_lo <= noise_hi");
    require(translation_scale >= 0.0 && center_offset >= 0.0 && cluster_radius >= 0.0 && spread >= 0.0,
            errc::kInvalidArgument, "scales must be non-negative");
    require(vocab_factor >= 1, errc::kInvalidArgument, "vocab_factor must be >= 1");
    require(checkpoints >= 0, errc::kInvalidArgument, "checkpoints must be >= 0");
  }

  Json to_json() const {
    return Json{{"D", dim},
                {"M", samples},
                {"K_true", clusters},
                {"noise_lo", noise_lo},
                {"noise_hi", noise_hi},
                {"translation_scale", translation_scale},
                {"center_offset", center_offset},
                {"cluster_radius", cluster_radius},
                {"spread", spread},
                {"vocab_factor", vocab_factor},
                {"checkpoints", checkpoints},
                {"seed", seed}};
  }
};

struct FixtureWorld {
  FixtureSpec spec;
  HiddenStates original;
  HiddenStates finetuned;
  std::vector<HiddenStates> checkpoints;  // linear in the translation, noise-free
  Unembedding unembedding;
  std::vector<int> labels;     // true cluster per sample
  Eigen::MatrixXd centers;     // D x K, mu_k
  Eigen::MatrixXd translations;  // D x K, t_k
  std::vector<double> noise_scales;
};

namespace fixture_detail {

inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

inline Eigen::VectorXd unit(const Eigen::VectorXd& v) {
  const double n = v.norm();
  return n > 0.0 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Zero(v.size());
}

inline std::string padded(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, i);
  return buf;
}

}  // namespace fixture_detail

inline FixtureWorld make_fixture_world(const FixtureSpec& spec) {
  using namespace fixture_detail;
  spec.validate();
  const int d = spec.dim;
  const int m = spec.samples;
  const int k = spec.clusters;

  // Independent streams so that changing one knob does not reshuffle the rest.
  Rng geometry(derive_seed(spec.seed, 0));
  Rng within(derive_seed(spec.seed, 1));
  Rng drift(derive_seed(spec.seed, 2));
  Rng vocab(derive_seed(spec.seed, 3));

  FixtureWorld w;
  w.spec = spec;
  const Eigen::VectorXd offset = spec.center_offset * unit(normal_vector(geometry, d));
  w.centers.resize(d, k);
  w.translations.resize(d, k);
  for (int c = 0; c < k; ++c) w.centers.col(c) = offset + spec.cluster_radius * unit(normal_vector(geometry, d));
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd t = normal_vector(geometry, d);
    const Eigen::VectorXd mu = w.centers.col(c);
    const double mm = mu.squaredNorm();
    if (mm > 0.0) t -= (t.dot(mu) / mm) * mu;
    w.translations.col(c) = spec.translation_scale * unit(t);
  }
  for (int c = 0; c < k; ++c) w.noise_scales.push_back(geometry.uniform(spec.noise_lo, spec.noise_hi));

  const Eigen::MatrixXd tuned_centers = w.centers + w.translations;
  Eigen::MatrixXd a(d, m), b(d, m);
  w.labels.resize(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s) {
    const int c = s % k;
    w.labels[static_cast<std::size_t>(s)] = c;
    a.col(s) = w.centers.col(c) + spec.spread * normal_vector(within, d);
    b.col(s) = a.col(s) + w.translations.col(c);
    if (k > 1 && spec.noise_hi > 0.0) {
      const int other = (c + 1 + static_cast<int>(drift.index(static_cast<std::uint64_t>(k - 1)))) % k;
      const double g = std::abs(drift.normal());
      const double scale = w.noise_scales[static_cast<std::size_t>(c)] * w.translations.col(c).norm() * g;
      b.col(s) += scale * unit(tuned_centers.col(other) - tuned_centers.col(c));
    }
  }

  auto states = [&](const Eigen::MatrixXd& data, const std::string& model) {
    HiddenStates h;
    h.data = data.cast<float>();
    for (int s = 0; s < m; ++s) h.sample_ids.push_back(padded("s", s, 4));
    h.layer = 12;
    h.token_of_interest = "dog";
    h.model_id = model;
    h.dataset_id = "fixture-seed" + std::to_string(spec.seed);
    return h;
  };
  w.original = states(a, "fixture-original");
  w.finetuned = states(b, "fixture-finetuned");
  for (int c = 1; c <= spec.checkpoints; ++c) {
    const double frac = static_cast<double>(c) / static_cast<double>(spec.checkpoints);
    Eigen::MatrixXd snap = a;
    for (int s = 0; s < m; ++s) snap.col(s) += frac * w.translations.col(w.labels[static_cast<std::size_t>(s)]);
    w.checkpoints.push_back(states(snap, padded("fixture-checkpoint", c, 2)));
  }

  // Token y reads coordinate y mod D with sign + for the first D rows and -
  // for the next D, plus a small off-diagonal perturbation.
  const int rows = spec.vocab_factor * d;
  w.unembedding.matrix.resize(rows, d);
  for (int y = 0; y < rows; ++y) {
    for (int j = 0; j < d; ++j) w.unembedding.matrix(y, j) = static_cast<float>(0.05 * vocab.normal());
    const int block = y / d;
    w.unembedding.matrix(y, y % d) += block % 2 == 0 ? 1.0f : -1.0f;
    w.unembedding.vocab.push_back(padded("tok_", y, 3));
  }
  return w;
}

inline constexpr const char* kFixtureTimestamp = "1970-01-01T00:00:00Z";

struct FixturePaths {
  fs::path original;
  fs::path finetuned;
  std::vector<fs::path> checkpoints;
  fs::path truth;
};

/// Writes both bundles (and any checkpoints) plus `truth.json` holding the
/// generating labels and parameters. Output is byte-identical for a given spec.
inline FixturePaths write_fixtures(const fs::path& dir, const FixtureSpec& spec) {
  const FixtureWorld w = make_fixture_world(spec);
  FixturePaths p;
  p.original = save_bundle(dir, "original", w.original, &w.unembedding, kFixtureTimestamp);
  p.finetuned = save_bundle(dir, "finetuned", w.finetuned, &w.unembedding, kFixtureTimestamp);
  for (std::size_t c = 0; c < w.checkpoints.size(); ++c)
    p.checkpoints.push_back(save_bundle(dir, fixture_detail::padded("checkpoint_", static_cast<int>(c + 1), 2),
                                        w.checkpoints[c], &w.unembedding, kFixtureTimestamp));
  Json truth;
  truth["spec"] = spec.to_json();
  truth["labels"] = w.labels;
  truth["noise_scales"] = w.noise_scales;
  p.truth = dir / "truth.json";
  write_json(truth, p.truth);
  return p;
}

}  // namespace clens
