#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>
#include <vector>

#include "clens/error.hpp"
#include "clens/tensor_store.hpp"

namespace clens {

struct PcaResult {
  Eigen::MatrixXd scores;      // M x dims, mean-centered
  Eigen::MatrixXd components;  // D x dims, unit columns
  std::vector<double> explained_variance_ratio;
  Eigen::VectorXd mean;        // D
};

/// Principal-component projection of the sample columns of h. Components are
/// ordered by descending variance; each is signed so that its largest-magnitude
/// loading is positive.
inline PcaResult pca_project(const HiddenStates& h, int dims) {
  require(h.data.allFinite(), errc::kNonFinite, "hidden states contain NaN/Inf");
  const Eigen::Index d = h.dim();
  const Eigen::Index m = h.samples();
  require(dims >= 1 && dims <= std::min(d, m), errc::kInvalidArgument,
          "dims=" + std::to_string(dims) + " outside [1, min(D, M)=" + std::to_string(std::min(d, m)) + "]");

  PcaResult r;
  const Eigen::MatrixXd x = h.data.cast<double>();
  r.mean = x.rowwise().mean();
  const Eigen::MatrixXd xc = x.colwise() - r.mean;
  const double denom = m > 1 ? static_cast<double>(m - 1) : 1.0;

  // Decompose whichever of the covariance (D x D) and Gram (M x M) matrices is
  // smaller; both share their nonzero spectrum.
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd loadings(d, dims);
  double total = 0.0;
  if (d <= m) {
    const Eigen::MatrixXd cov = xc * xc.transpose() / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    require(es.info() == Eigen::Success, errc::kDegenerate, "eigendecomposition failed");
    eigenvalues = es.eigenvalues().reverse();
    total = cov.trace();
    for (int c = 0; c < dims; ++c) loadings.col(c) = es.eigenvectors().col(d - 1 - c);
  } else {
    const Eigen::MatrixXd gram = xc.transpose() * xc / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    require(es.info() == Eigen::Success, errc::kDegenerate, "eigendecomposition failed");
    eigenvalues = es.eigenvalues().reverse();
    total = gram.trace();
    for (int c = 0; c < dims; ++c) {
      const Eigen::VectorXd v = xc * es.eigenvectors().col(m - 1 - c);
      const double n = v.norm();
      loadings.col(c) = n > 0.0 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Zero(d);
    }
  }

  for (int c = 0; c < dims; ++c) {
    Eigen::Index arg = 0;
    loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (loadings(arg, c) < 0.0) loadings.col(c) *= -1.0;
    const double lambda = std::max(0.0, eigenvalues(c));
    r.explained_variance_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
  }
  r.components = loadings;
  r.scores = xc.transpose() * loadings;
  return r;
}

}  // namespace clens
