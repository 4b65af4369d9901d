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

#include "sflens/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include "sflens/error.hpp"

namespace sflens {

namespace {

std::size_t Nearest(const RowMatrix& centers, const RowMatrix& points, Eigen::Index i,
                    double* best_d2 = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (points.row(i) - centers.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  if (best_d2 != nullptr) *best_d2 = best_d;
  return best;
}

RowMatrix SeedPlusPlus(const RowMatrix& points, std::size_t k, std::mt19937_64& rng) {
  const auto m = static_cast<std::size_t>(points.rows());
  RowMatrix centers(static_cast<Eigen::Index>(k), points.cols());
  std::vector<bool> chosen(m, false);
  std::uniform_int_distribution<std::size_t> first(0, m - 1);
  std::size_t pick = first(rng);
  centers.row(0) = points.row(static_cast<Eigen::Index>(pick));
  chosen[pick] = true;
  std::vector<double> d2(m);
  for (std::size_t i = 0; i < m; ++i) {
    d2[i] = (points.row(static_cast<Eigen::Index>(i)) - centers.row(0)).squaredNorm();
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      pick = m;
      for (std::size_t i = 0; i < m; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      // every remaining point coincides with a centre
      pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
    }
    chosen[pick] = true;
    centers.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < m; ++i) {
      d2[i] = std::min(d2[i], (points.row(static_cast<Eigen::Index>(i)) -
                               centers.row(static_cast<Eigen::Index>(c))).squaredNorm());
    }
  }
  return centers;
}

}  // namespace

double Wcss(const RowMatrix& points, const RowMatrix& centers,
            const std::vector<std::size_t>& assignment) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    sum += (points.row(i) - centers.row(static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)])))
               .squaredNorm();
  }
  return sum;
}

KMeansResult KMeans(const RowMatrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options) {
  const auto m = static_cast<std::size_t>(points.rows());
  if (m == 0) throw Error(Errc::kDegenerateData, "k-means needs at least one point");
  if (k == 0) throw Error(Errc::kBadParameter, "k must be positive");
  if (!points.allFinite()) throw Error(Errc::kNonFiniteValue, "k-means input");
  k = std::min(k, m);

  std::mt19937_64 rng(seed);
  KMeansResult result;
  result.centers = SeedPlusPlus(points, k, rng);
  result.assignment.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    result.assignment[i] = Nearest(result.centers, points, static_cast<Eigen::Index>(i));
  }

  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    RowMatrix next = RowMatrix::Zero(result.centers.rows(), result.centers.cols());
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      next.row(static_cast<Eigen::Index>(result.assignment[i])) += points.row(static_cast<Eigen::Index>(i));
      ++count[result.assignment[i]];
    }
    double max_move = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const auto r = static_cast<Eigen::Index>(c);
      if (count[c] == 0) {
        next.row(r) = result.centers.row(r);  // empty cluster keeps its centre
      } else {
        next.row(r) /= static_cast<double>(count[c]);
      }
      max_move = std::max(max_move, (next.row(r) - result.centers.row(r)).norm());
    }
    result.centers = std::move(next);
    result.wcss_trace.push_back(Wcss(points, result.centers, result.assignment));
    ++result.iterations;

    bool changed = false;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t c = Nearest(result.centers, points, static_cast<Eigen::Index>(i));
      if (c != result.assignment[i]) {
        result.assignment[i] = c;
        changed = true;
      }
    }
    if (!changed || max_move < options.tolerance) {
      result.converged = true;
      if (changed) result.wcss_trace.push_back(Wcss(points, result.centers, result.assignment));
      break;
    }
  }
  return result;
}

}  // namespace sflens
