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

#ifndef SFLENS_TSNE_HPP_
#define SFLENS_TSNE_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "sflens/pca.hpp"

namespace sflens {

inline constexpr int kEmbeddingDims = 3;

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  int exaggeration_iterations = 250;
  double exaggeration = 12.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  /// Barnes-Hut opening angle, used when n exceeds `exact_limit`.
  double theta = 0.5;
  std::size_t exact_limit = 1000;
  /// 0 selects max(n / 12, 50).
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int objective_every = 50;
  std::function<void(int iteration)> progress;
};

struct TsneResult {
  RowMatrix embedding;  // n x 3
  /// (iteration, KL divergence); iteration 0 is the initial layout.
  std::vector<std::pair<int, double>> objective;
  double learning_rate = 0.0;
  bool barnes_hut = false;
};

/// 3-D t-SNE. Exact gradients up to `exact_limit` points, Barnes-Hut with an
/// octree and vantage-point-tree neighbours above. The result depends only on
/// the input and `seed`, not on `threads`.
///
/// Throws DegenerateData for n < 4 and PerplexityTooLarge unless
/// perplexity < (n - 1) / 3.
TsneResult ReduceTsne(const RowMatrix& points, const TsneOptions& options = {});

}  // namespace sflens

#endif  // SFLENS_TSNE_HPP_
