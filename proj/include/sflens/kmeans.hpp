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

#ifndef SFLENS_KMEANS_HPP_
#define SFLENS_KMEANS_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sflens/pca.hpp"

namespace sflens {

inline constexpr std::size_t kDefaultClusters = 9;

struct KMeansOptions {
  std::size_t max_iterations = 300;
  double tolerance = 1e-4;  // largest centre move that counts as converged
};

struct KMeansResult {
  RowMatrix centers;                    // k x dims
  std::vector<std::size_t> assignment;  // one centre per point
  /// Within-cluster sum of squares after every Lloyd iteration.
  std::vector<double> wcss_trace;
  std::size_t iterations = 0;
  bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations. k is capped at the point
/// count; distance ties go to the lower centre index.
KMeansResult KMeans(const RowMatrix& points, std::size_t k = kDefaultClusters,
                    std::uint64_t seed = 0, const KMeansOptions& options = {});

double Wcss(const RowMatrix& points, const RowMatrix& centers,
            const std::vector<std::size_t>& assignment);

}  // namespace sflens

#endif  // SFLENS_KMEANS_HPP_
