// Copyright 2026 The sf-lens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sflens/pca.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "sflens/error.hpp"

namespace sflens {

PcaResult ReducePca(const RowMatrix& data, std::size_t max_components) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  if (n < 2) throw Error(Errc::kDegenerateData, "PCA needs at least two rows");
  if (d == 0) throw Error(Errc::kDegenerateData, "PCA needs at least one column");
  if (!data.allFinite()) throw Error(Errc::kNonFiniteValue, "PCA input");

  PcaResult out;
  out.mean = data.colwise().mean();
  const RowMatrix centered = data.rowwise() - out.mean;
  if (centered.cwiseAbs().maxCoeff() == 0.0) {
    throw Error(Errc::kDegenerateData, "all points are identical");
  }
  const std::size_t k = std::min({max_components, d, n - 1});
  const double denom = static_cast<double>(n - 1);

  // Eigen-decompose whichever of the d x d covariance or the n x n Gram
  // matrix is smaller; both share the non-zero spectrum.
  Eigen::MatrixXd axes(d, k);
  Eigen::VectorXd variance(k);
  if (d <= n) {
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    for (std::size_t c = 0; c < k; ++c) {
      const Eigen::Index src = static_cast<Eigen::Index>(d - 1 - c);
      axes.col(static_cast<Eigen::Index>(c)) = solver.eigenvectors().col(src);
      variance(static_cast<Eigen::Index>(c)) = std::max(0.0, solver.eigenvalues()(src));
    }
  } else {
    const Eigen::MatrixXd gram = (centered * centered.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    for (std::size_t c = 0; c < k; ++c) {
      const Eigen::Index src = static_cast<Eigen::Index>(n - 1 - c);
      Eigen::VectorXd axis = centered.transpose() * solver.eigenvectors().col(src);
      const double norm = axis.norm();
      if (norm > 0.0) {
        axis /= norm;
      } else {
        // Zero-variance direction: any unit vector orthogonal to the previous axes.
        axis.setZero();
        for (std::size_t e = 0; e < d && axis.norm() == 0.0; ++e) {
          Eigen::VectorXd cand = Eigen::VectorXd::Unit(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(e));
          for (std::size_t p = 0; p < c; ++p) {
            cand -= axes.col(static_cast<Eigen::Index>(p)).dot(cand) * axes.col(static_cast<Eigen::Index>(p));
          }
          if (cand.norm() > 1e-8) axis = cand.normalized();
        }
      }
      axes.col(static_cast<Eigen::Index>(c)) = axis;
      variance(static_cast<Eigen::Index>(c)) = std::max(0.0, solver.eigenvalues()(src));
    }
  }

  for (Eigen::Index c = 0; c < axes.cols(); ++c) {
    Eigen::Index arg = 0;
    for (Eigen::Index r = 1; r < axes.rows(); ++r) {
      if (std::abs(axes(r, c)) > std::abs(axes(arg, c))) arg = r;
    }
    if (axes(arg, c) < 0.0) axes.col(c) *= -1.0;
  }

  out.components = axes.transpose();
  out.explained_variance = variance;
  out.projected = centered * axes;
  return out;
}

}  // namespace sflens
