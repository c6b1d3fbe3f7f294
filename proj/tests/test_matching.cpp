#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "clens/matching.hpp"
#include "oracles.hpp"

using namespace clens;

namespace {

std::string code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "no error";
}

SimilarityMatrix sim(Eigen::MatrixXd v) { return SimilarityMatrix{std::move(v)}; }

bool is_permutation(const std::vector<int>& map, int n) {
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (int j : map) {
    if (j < 0 || j >= n || seen[static_cast<std::size_t>(j)]++) return false;
  }
  return static_cast<int>(map.size()) == n;
}

}  // namespace

TEST(Cosine, BasicsAndZeroVector) {
  Eigen::Vector3f a(1, 0, 0), b(0, 2, 0), c(-3, 0, 0);
  EXPECT_DOUBLE_EQ(cosine(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine(a, c), -1.0);
  EXPECT_DOUBLE_EQ(cosine(a, a * 7.0f), 1.0);
  EXPECT_DOUBLE_EQ(cosine(a, Eigen::Vector3f::Zero()), 0.0);
  Eigen::Vector2d x(1, 1), y(1, 0);
  EXPECT_NEAR(cosine(x, y), std::sqrt(0.5), 1e-15);
}

TEST(Similarity, EntriesAndDimCheck) {
  ConceptDictionary a, b;
  a.concepts.resize(2, 2);
  a.concepts << 1, 0, 0, 1;
  b.concepts.resize(2, 3);
  b.concepts << 1, 0, 1, 0, 5, 1;
  const SimilarityMatrix s = similarity(a, b);
  ASSERT_EQ(s.values.rows(), 2);
  ASSERT_EQ(s.values.cols(), 3);
  EXPECT_DOUBLE_EQ(s.values(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.values(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(s.values(0, 1), 0.0);
  EXPECT_NEAR(s.values(1, 2), std::sqrt(0.5), 1e-7);
  EXPECT_LE(s.values.cwiseAbs().maxCoeff(), 1.0);

  b.concepts = Matrix::Ones(3, 2);
  EXPECT_EQ(code_of([&] { similarity(a, b); }), errc::kDimMismatch);
}

TEST(GreedyMatch, RowArgmaxWithLowIndexTies) {
  Eigen::MatrixXd s(3, 3);
  s << 0.9, 0.9, 0.1,  //
      0.8, 0.2, 0.3,   //
      -1, -0.5, -0.5;
  const Matching m = greedy_match(sim(s));
  EXPECT_EQ(m.map, (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(m.mode, MatchMode::greedy);
  EXPECT_NEAR(m.total_cost, 0.1 + 0.2 + 1.5, 1e-12);
}

TEST(BijectiveMatch, BeatsGreedyWhenGreedyCollides) {
  Eigen::MatrixXd s(2, 2);
  s << 0.9, 0.8,  //
      0.85, 0.1;
  const Matching m = bijective_match(sim(s));
  EXPECT_EQ(m.map, (std::vector<int>{1, 0}));
  EXPECT_NEAR(m.total_cost, 0.2 + 0.15, 1e-12);
  const Eigen::MatrixXi g = m.transport();
  EXPECT_EQ(g.rowwise().sum(), Eigen::VectorXi::Ones(2));
  EXPECT_EQ(g.colwise().sum(), Eigen::RowVectorXi::Ones(2));
}

TEST(BijectiveMatch, MatchesBruteForceOnRandomMatrices) {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(7));
    Eigen::MatrixXd s(n, n);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(-1.0, 1.0);
    const Matching m = bijective_match(sim(s));
    ASSERT_TRUE(is_permutation(m.map, n));
    const auto best = oracle::min_cost_permutation((1.0 - s.array()).matrix());
    EXPECT_NEAR(m.total_cost, best.cost, 1e-9);
    EXPECT_EQ(m.map, best.first_optimal);
  }
}

TEST(BijectiveMatch, LexicographicTieBreakOnQuantizedMatrices) {
  // Values on a coarse grid produce many tied optima.
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(5));
    Eigen::MatrixXd s(n, n);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = static_cast<double>(rng.index(3)) * 0.5 - 0.5;
    const auto best = oracle::min_cost_permutation((1.0 - s.array()).matrix());
    EXPECT_EQ(bijective_match(sim(s)).map, best.first_optimal) << s;
  }
  EXPECT_EQ(bijective_match(sim(Eigen::MatrixXd::Zero(4, 4))).map, (std::vector<int>{0, 1, 2, 3}));
}

TEST(BijectiveMatch, RectangularPadding) {
  // More sources than targets: the worst-fitting source goes unmatched.
  Eigen::MatrixXd tall(3, 2);
  tall << 0.9, 0.1,  //
      0.2, 0.3,      //
      0.1, 0.95;
  const Matching m = bijective_match(sim(tall));
  EXPECT_EQ(m.map, (std::vector<int>{0, -1, 1}));
  EXPECT_TRUE(std::isnan(m.similarity[1]));
  EXPECT_NEAR(m.total_cost, 0.1 + 0.05, 1e-12);
  EXPECT_EQ(m.transport().sum(), 2);

  // More targets than sources: every source is matched, one target is spare.
  const Matching wide = bijective_match(sim(tall.transpose()));
  EXPECT_EQ(wide.map, (std::vector<int>{0, 2}));
  EXPECT_EQ(wide.target_count, 3);
}

TEST(BijectiveMatch, RejectsNonFiniteAndEmpty) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 2);
  s(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of([&] { bijective_match(sim(s)); }), errc::kNonFinite);
  EXPECT_EQ(code_of([&] { bijective_match(sim(Eigen::MatrixXd(0, 0))); }), errc::kEmpty);
  EXPECT_EQ(code_of([&] { greedy_match(sim(Eigen::MatrixXd(0, 3))); }), errc::kEmpty);
}

TEST(BijectiveMatch, IdentityForIdenticalDictionaries) {
  Rng rng(2);
  ConceptDictionary d;
  d.concepts.resize(10, 12);
  for (Eigen::Index i = 0; i < d.concepts.size(); ++i) d.concepts.data()[i] = static_cast<float>(rng.normal());
  const Matching m = match(similarity(d, d), MatchMode::bijective);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(m.map[static_cast<std::size_t>(i)], i);
  EXPECT_NEAR(m.total_cost, 0.0, 1e-12);
}

TEST(MatchMode, ParseAndPrint) {
  EXPECT_EQ(parse_match_mode("greedy"), MatchMode::greedy);
  EXPECT_EQ(parse_match_mode("bijective"), MatchMode::bijective);
  EXPECT_STREQ(to_string(MatchMode::bijective), "bijective");
  EXPECT_EQ(code_of([] { parse_match_mode("hungarian"); }), errc::kInvalidArgument);
}

TEST(SolveAssignment, DualFeasibility) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(9));
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform(0.0, 2.0);
    const auto sol = detail::solve_assignment(c);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double slack = c(i, j) - sol.row_potential[static_cast<std::size_t>(i)] -
                             sol.col_potential[static_cast<std::size_t>(j)];
        EXPECT_GE(slack, -1e-9);
        if (sol.row_to_col[static_cast<std::size_t>(i)] == j) EXPECT_NEAR(slack, 0.0, 1e-9);
      }
  }
}
