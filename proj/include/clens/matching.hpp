#pragma once

// Concept association across two dictionaries: per-row greedy argmax of cosine
// similarity, or the exact minimum-cost bijection under cost 1 - S_ij.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "clens/concept_dictionary.hpp"
#include "clens/error.hpp"

namespace clens {

struct SimilarityMatrix {
  Eigen::MatrixXd values;  // K_a x K_b, entries in [-1, 1]
};

enum class MatchMode { greedy, bijective };

inline const char* to_string(MatchMode m) { return m == MatchMode::greedy ? "greedy" : "bijective"; }

inline MatchMode parse_match_mode(const std::string& s) {
  if (s == "greedy") return MatchMode::greedy;
  if (s == "bijective") return MatchMode::bijective;
  fail(errc::kInvalidArgument, "unknown match mode '" + s + "'");
}

struct Matching {
  MatchMode mode = MatchMode::greedy;
  std::vector<int> map;             // source i -> target m(i), -1 when unmatched
  std::vector<double> similarity;   // S_{i, m(i)} (NaN when unmatched)
  double total_cost = 0.0;          // sum of 1 - S over matched pairs, in row order
  int target_count = 0;

  /// K_a x K_b 0/1 plan.
  Eigen::MatrixXi transport() const {
    Eigen::MatrixXi g = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(map.size()), target_count);
    for (std::size_t i = 0; i < map.size(); ++i)
      if (map[i] >= 0) g(static_cast<Eigen::Index>(i), map[i]) = 1;
    return g;
  }
};

/// Cosine in double precision; 0 when either vector is zero.
template <class A, class B>
double cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const Eigen::VectorXd x = a.template cast<double>();
  const Eigen::VectorXd y = b.template cast<double>();
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
}

/// S_ij = cos(u^a_i, u^b_j); cosine with a zero vector is 0.
inline SimilarityMatrix similarity(const ConceptDictionary& a, const ConceptDictionary& b) {
  require(a.dim() == b.dim(), errc::kDimMismatch,
          "dictionaries have D=" + std::to_string(a.dim()) + " and D=" + std::to_string(b.dim()));
  const Eigen::MatrixXd ua = a.concepts.cast<double>();
  const Eigen::MatrixXd ub = b.concepts.cast<double>();
  SimilarityMatrix s;
  s.values.resize(ua.cols(), ub.cols());
  for (Eigen::Index i = 0; i < ua.cols(); ++i)
    for (Eigen::Index j = 0; j < ub.cols(); ++j) s.values(i, j) = cosine(ua.col(i), ub.col(j));
  return s;
}

namespace detail {

inline Matching finish(MatchMode mode, const SimilarityMatrix& s, std::vector<int> map) {
  Matching out;
  out.mode = mode;
  out.target_count = static_cast<int>(s.values.cols());
  out.similarity.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] < 0) {
      out.similarity[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out.similarity[i] = s.values(static_cast<Eigen::Index>(i), map[i]);
    out.total_cost += 1.0 - out.similarity[i];
  }
  out.map = std::move(map);
  return out;
}

struct AssignmentSolution {
  std::vector<int> row_to_col;
  std::vector<double> row_potential;
  std::vector<double> col_potential;
};

// Shortest augmenting path Hungarian method on a square cost matrix, O(n^3).
// Returns dual potentials with u_i + v_j <= c_ij, equality on the assignment.
inline AssignmentSolution solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  AssignmentSolution sol;
  sol.row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j]) sol.row_to_col[p[j] - 1] = j - 1;
  sol.row_potential.assign(u.begin() + 1, u.end());
  sol.col_potential.assign(v.begin() + 1, v.end());
  return sol;
}

inline double permutation_cost(const Eigen::MatrixXd& cost, const std::vector<int>& perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) total += cost(static_cast<Eigen::Index>(i), perm[i]);
  return total;
}

// Costs within this much of the optimum count as ties.
inline constexpr double kCostTieTolerance = 1e-9;

/// Minimum-cost permutation; among optimal ones, the lexicographically
/// smallest. Rows are fixed in order: column j is tried for row i only if its
/// reduced cost is (near) zero, since any permutation using (i, j) costs at
/// least optimum + reduced_cost(i, j); candidates are confirmed by re-solving
/// the remaining rows.
inline std::vector<int> lexicographic_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  const AssignmentSolution base = solve_assignment(cost);
  std::vector<int> current = base.row_to_col;
  const double optimum = permutation_cost(cost, current);

  std::vector<char> col_used(n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (col_used[j]) continue;
      if (j == current[i]) break;
      const double reduced = cost(i, j) - base.row_potential[i] - base.col_potential[j];
      if (reduced > kCostTieTolerance) continue;

      // Best completion of rows i+1.. over the columns left after fixing (i, j).
      std::vector<int> free_cols;
      for (int c = 0; c < n; ++c)
        if (!col_used[c] && c != j) free_cols.push_back(c);
      const int rest = n - i - 1;
      std::vector<int> candidate(current.begin(), current.begin() + i);
      candidate.push_back(j);
      if (rest > 0) {
        Eigen::MatrixXd sub(rest, rest);
        for (int r = 0; r < rest; ++r)
          for (int c = 0; c < rest; ++c) sub(r, c) = cost(i + 1 + r, free_cols[c]);
        const AssignmentSolution tail = solve_assignment(sub);
        for (int r = 0; r < rest; ++r) candidate.push_back(free_cols[tail.row_to_col[r]]);
      }
      if (permutation_cost(cost, candidate) <= optimum + kCostTieTolerance) {
        current = std::move(candidate);
        break;
      }
    }
    col_used[current[i]] = 1;
  }
  return current;
}

}  // namespace detail

/// m(i) = argmax_j S_ij per row (ties to the lowest j). Not injective.
inline Matching greedy_match(const SimilarityMatrix& s) {
  require(s.values.size() > 0, errc::kEmpty, "empty similarity matrix");
  std::vector<int> map(static_cast<std::size_t>(s.values.rows()));
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < s.values.cols(); ++j)
      if (s.values(i, j) > s.values(i, best)) best = j;
    map[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return detail::finish(MatchMode::greedy, s, std::move(map));
}

/// Exact minimum-cost bijection under cost 1 - S_ij. Rectangular inputs are
/// padded with similarity -1 dummies; rows paired with a dummy column map to -1.
inline Matching bijective_match(const SimilarityMatrix& s) {
  require(s.values.size() > 0, errc::kEmpty, "empty similarity matrix");
  require(s.values.allFinite(), errc::kNonFinite, "similarity matrix contains NaN/Inf");
  const Eigen::Index ka = s.values.rows();
  const Eigen::Index kb = s.values.cols();
  const Eigen::Index n = std::max(ka, kb);
  Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, n, 2.0);  // 1 - (-1)
  cost.topLeftCorner(ka, kb) = (1.0 - s.values.array()).matrix();
  const std::vector<int> perm = detail::lexicographic_assignment(cost);
  std::vector<int> map(static_cast<std::size_t>(ka));
  for (Eigen::Index i = 0; i < ka; ++i) {
    const int j = perm[static_cast<std::size_t>(i)];
    map[static_cast<std::size_t>(i)] = j < kb ? j : -1;
  }
  return detail::finish(MatchMode::bijective, s, std::move(map));
}

inline Matching match(const SimilarityMatrix& s, MatchMode mode) {
  return mode == MatchMode::greedy ? greedy_match(s) : bijective_match(s);
}

}  // namespace clens
