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

#ifndef SFLENS_PCA_HPP_
#define SFLENS_PCA_HPP_

#include <Eigen/Core>
#include <cstddef>

namespace sflens {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PcaResult {
  RowMatrix projected;                 // n x k'
  RowMatrix components;                // k' x d, orthonormal rows
  Eigen::VectorXd explained_variance;  // k', descending
  Eigen::RowVectorXd mean;             // d
};

/// Projects mean-centred rows onto the top k' = min(max_components, d, n-1)
/// principal axes. Each axis is signed so that its largest-magnitude
/// coordinate is positive. Throws DegenerateData for n < 2 or when all rows
/// coincide.
PcaResult ReducePca(const RowMatrix& data, std::size_t max_components = 50);

}  // namespace sflens

#endif  // SFLENS_PCA_HPP_
