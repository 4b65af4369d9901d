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

#include "sflens/tsne.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <random>
#include <memory>
#include <span>
#include <string>
#include <tuple>

#include "sflens/error.hpp"
#include "sflens/parallel.hpp"

namespace sflens {

namespace {

using Vec3 = std::array<double, kEmbeddingDims>;

constexpr double kPerplexityTolerance = 1e-5;
constexpr int kPerplexitySteps = 200;

// Gaussian conditional probabilities of one point whose precision is tuned
// so that the row entropy equals log(perplexity). `sq_dist` excludes the
// point itself.
void CalibrateRow(std::span<const double> sq_dist, double perplexity, std::span<double> out) {
  const double target = std::log(perplexity);
  const double floor = *std::min_element(sq_dist.begin(), sq_dist.end());
  double beta = 1.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (int step = 0; step < kPerplexitySteps; ++step) {
    double sum = 0.0;
    double weighted = 0.0;
    for (std::size_t j = 0; j < sq_dist.size(); ++j) {
      const double shifted = sq_dist[j] - floor;
      out[j] = std::exp(-beta * shifted);
      sum += out[j];
      weighted += shifted * out[j];
    }
    const double entropy = std::log(sum) + beta * weighted / sum;
    if (std::abs(entropy - target) < kPerplexityTolerance) break;
    if (entropy > target) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
    } else {
      hi = beta;
      beta = std::isinf(lo) ? beta * 0.5 : 0.5 * (beta + lo);
    }
  }
  double sum = 0.0;
  for (double v : out) sum += v;
  for (double& v : out) v /= sum;
}

double SquaredDistance(const RowMatrix& x, Eigen::Index a, Eigen::Index b) {
  return (x.row(a) - x.row(b)).squaredNorm();
}

// --- vantage-point tree for k nearest neighbours ---------------------------

class VpTree {
 public:
  VpTree(const RowMatrix& x, std::uint64_t seed) : x_(x), items_(static_cast<std::size_t>(x.rows())) {
    for (std::size_t i = 0; i < items_.size(); ++i) items_[i] = i;
    std::mt19937_64 rng(seed);
    nodes_.reserve(items_.size());
    root_ = Build(0, items_.size(), rng);
  }

  /// k nearest neighbours of row `query`, excluding itself, nearest first.
  void Search(std::size_t query, std::size_t k, std::vector<std::size_t>& idx,
              std::vector<double>& dist) const {
    Heap heap;
    double tau = std::numeric_limits<double>::infinity();
    Visit(root_, query, k, heap, tau);
    idx.resize(heap.size());
    dist.resize(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
      dist[i] = heap.top().first;
      idx[i] = heap.top().second;
      heap.pop();
    }
  }

 private:
  struct Node {
    std::size_t item = 0;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
  };
  using Heap = std::priority_queue<std::pair<double, std::size_t>>;

  double Dist(std::size_t a, std::size_t b) const {
    return std::sqrt(SquaredDistance(x_, static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
  }

  int Build(std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
    if (lo >= hi) return -1;
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    std::uniform_int_distribution<std::size_t> pick(lo, hi - 1);
    std::swap(items_[lo], items_[pick(rng)]);
    const std::size_t vantage = items_[lo];
    nodes_[static_cast<std::size_t>(id)].item = vantage;
    if (hi - lo > 1) {
      const std::size_t median = (lo + hi) / 2;
      auto first = items_.begin() + static_cast<std::ptrdiff_t>(lo + 1);
      auto nth = items_.begin() + static_cast<std::ptrdiff_t>(median);
      auto last = items_.begin() + static_cast<std::ptrdiff_t>(hi);
      std::nth_element(first, nth, last, [&](std::size_t a, std::size_t b) {
        const double da = Dist(vantage, a);
        const double db = Dist(vantage, b);
        return da != db ? da < db : a < b;
      });
      const double threshold = Dist(vantage, items_[median]);
      const int left = Build(lo + 1, median, rng);
      const int right = Build(median, hi, rng);
      Node& node = nodes_[static_cast<std::size_t>(id)];
      node.threshold = threshold;
      node.left = left;
      node.right = right;
    }
    return id;
  }

  void Visit(int id, std::size_t query, std::size_t k, Heap& heap, double& tau) const {
    if (id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    const double d = Dist(node.item, query);
    if (node.item != query && (heap.size() < k || d < tau ||
                               (d == tau && node.item < heap.top().second))) {
      heap.emplace(d, node.item);
      if (heap.size() > k) heap.pop();
      if (heap.size() == k) tau = heap.top().first;
    }
    if (node.left < 0 && node.right < 0) return;
    if (d < node.threshold) {
      if (d - tau <= node.threshold) Visit(node.left, query, k, heap, tau);
      if (d + tau >= node.threshold) Visit(node.right, query, k, heap, tau);
    } else {
      if (d + tau >= node.threshold) Visit(node.right, query, k, heap, tau);
      if (d - tau <= node.threshold) Visit(node.left, query, k, heap, tau);
    }
  }

  const RowMatrix& x_;
  std::vector<std::size_t> items_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// --- octree for the repulsive forces ---------------------------------------

class Octree {
 public:
  explicit Octree(const RowMatrix& y) : y_(y), order_(static_cast<std::size_t>(y.rows())) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    Vec3 center;
    double half = 0.0;
    for (int a = 0; a < kEmbeddingDims; ++a) {
      const double lo = y.col(a).minCoeff();
      const double hi = y.col(a).maxCoeff();
      center[a] = 0.5 * (lo + hi);
      half = std::max(half, 0.5 * (hi - lo));
    }
    nodes_.reserve(order_.size() * 2);
    scratch_.resize(order_.size());
    nodes_.emplace_back();
    Build(0, 0, static_cast<std::uint32_t>(order_.size()), center, half * (1.0 + 1e-9) + 1e-12, 0);
  }

  /// Adds the unnormalised repulsion on point i to `neg` and the sum of
  /// q_ij = 1 / (1 + |y_i - y_j|^2) over j != i to `sum_q`.
  void Repulsion(std::size_t i, double theta, Vec3& neg, double& sum_q) const {
    const auto row = static_cast<Eigen::Index>(i);
    const Vec3 yi{y_(row, 0), y_(row, 1), y_(row, 2)};
    const double theta2 = theta * theta;
    std::uint32_t stack[kMaxDepth * 8 + 8];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (node.child_count == 0) {
        for (std::uint32_t k = node.begin; k < node.end; ++k) {
          const std::uint32_t p = order_[k];
          if (p == i) continue;
          Vec3 diff;
          double d2 = 0.0;
          for (int a = 0; a < kEmbeddingDims; ++a) {
            diff[a] = yi[a] - y_(p, a);
            d2 += diff[a] * diff[a];
          }
          const double q = 1.0 / (1.0 + d2);
          sum_q += q;
          for (int a = 0; a < kEmbeddingDims; ++a) neg[a] += q * q * diff[a];
        }
        continue;
      }
      Vec3 diff;
      double d2 = 0.0;
      for (int a = 0; a < kEmbeddingDims; ++a) {
        diff[a] = yi[a] - node.com[a];
        d2 += diff[a] * diff[a];
      }
      if (node.width * node.width < theta2 * d2) {
        const double q = 1.0 / (1.0 + d2);
        const double mult = static_cast<double>(node.end - node.begin) * q;
        sum_q += mult;
        for (int a = 0; a < kEmbeddingDims; ++a) neg[a] += mult * q * diff[a];
        continue;
      }
      for (int c = node.child_count - 1; c >= 0; --c) {
        stack[top++] = static_cast<std::uint32_t>(node.child_begin + c);
      }
    }
  }

 private:
  static constexpr int kMaxDepth = 40;

  struct Node {
    Vec3 com{};
    double width = 0.0;
    std::uint32_t begin = 0;  // range in order_
    std::uint32_t end = 0;
    std::uint32_t child_begin = 0;
    int child_count = 0;  // 0 for leaves
  };

  // Builds the subtree of `node` over order_[begin, end). Children occupy
  // consecutive slots so a node only needs the first index and the count.
  void Build(std::uint32_t node, std::uint32_t begin, std::uint32_t end, const Vec3& center,
             double half, int depth) {
    Vec3 com{};
    Vec3 lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (std::uint32_t k = begin; k < end; ++k) {
      for (int a = 0; a < kEmbeddingDims; ++a) {
        const double v = y_(order_[k], a);
        com[a] += v;
        lo[a] = std::min(lo[a], v);
        hi[a] = std::max(hi[a], v);
      }
    }
    const double count = static_cast<double>(end - begin);
    for (double& v : com) v /= count;
    nodes_[node].com = com;
    nodes_[node].width = 2.0 * half;
    nodes_[node].begin = begin;
    nodes_[node].end = end;
    const bool identical = lo == hi;
    if (end - begin <= 1 || identical || depth >= kMaxDepth) return;

    // stable counting sort of the range by octant
    std::array<std::uint32_t, 9> offset{};
    auto octant = [&](std::uint32_t p) {
      int o = 0;
      for (int a = 0; a < kEmbeddingDims; ++a) {
        if (y_(p, a) >= center[a]) o |= 1 << a;
      }
      return o;
    };
    for (std::uint32_t k = begin; k < end; ++k) ++offset[static_cast<std::size_t>(octant(order_[k])) + 1];
    for (std::size_t o = 1; o < offset.size(); ++o) offset[o] += offset[o - 1];
    std::array<std::uint32_t, 8> cursor;
    std::copy(offset.begin(), offset.begin() + 8, cursor.begin());
    for (std::uint32_t k = begin; k < end; ++k) {
      const std::uint32_t p = order_[k];
      scratch_[begin + cursor[static_cast<std::size_t>(octant(p))]++] = p;
    }
    std::copy(scratch_.begin() + begin, scratch_.begin() + end, order_.begin() + begin);

    const auto first = static_cast<std::uint32_t>(nodes_.size());
    int children = 0;
    for (int o = 0; o < 8; ++o) {
      if (offset[static_cast<std::size_t>(o) + 1] > offset[static_cast<std::size_t>(o)]) {
        nodes_.emplace_back();
        ++children;
      }
    }
    nodes_[node].child_begin = first;
    nodes_[node].child_count = children;
    std::uint32_t slot = first;
    for (int o = 0; o < 8; ++o) {
      const std::uint32_t b = begin + offset[static_cast<std::size_t>(o)];
      const std::uint32_t e = begin + offset[static_cast<std::size_t>(o) + 1];
      if (e == b) continue;
      Vec3 c;
      for (int a = 0; a < kEmbeddingDims; ++a) c[a] = center[a] + ((o >> a) & 1 ? 0.5 * half : -0.5 * half);
      Build(slot++, b, e, c, 0.5 * half, depth + 1);
    }
  }

  const RowMatrix& y_;
  std::vector<std::uint32_t> order_;
  std::vector<std::uint32_t> scratch_;
  std::vector<Node> nodes_;
};


// --- shared optimiser ------------------------------------------------------

struct SparseP {
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col;
  std::vector<double> val;
};

SparseP BuildSparseP(const RowMatrix& x, double perplexity, std::uint64_t seed, unsigned threads) {
  const auto n = static_cast<std::size_t>(x.rows());
  const std::size_t k = std::min(n - 1, static_cast<std::size_t>(std::floor(3.0 * perplexity)));
  VpTree tree(x, seed);
  std::vector<std::vector<std::size_t>> nbr(n);
  std::vector<std::vector<double>> cond(n);
  ParallelFor(n, threads, [&](std::size_t i) {
    std::vector<double> dist;
    tree.Search(i, k, nbr[i], dist);
    for (double& v : dist) v *= v;
    cond[i].resize(dist.size());
    CalibrateRow(dist, perplexity, cond[i]);
  });
  // Symmetrise: P = (P_cond + P_cond^T), normalised to sum 1.
  std::vector<std::tuple<std::size_t, std::size_t, double>> entries;
  entries.reserve(2 * n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < nbr[i].size(); ++j) {
      entries.emplace_back(i, nbr[i][j], cond[i][j]);
      entries.emplace_back(nbr[i][j], i, cond[i][j]);
    }
  }
  std::sort(entries.begin(), entries.end());
  SparseP p;
  p.row_ptr.assign(n + 1, 0);
  double total = 0.0;
  for (std::size_t e = 0; e < entries.size();) {
    const auto [i, j, v0] = entries[e];
    double v = 0.0;
    while (e < entries.size() && std::get<0>(entries[e]) == i && std::get<1>(entries[e]) == j) {
      v += std::get<2>(entries[e]);
      ++e;
    }
    p.col.push_back(j);
    p.val.push_back(v);
    ++p.row_ptr[i + 1];
    total += v;
  }
  for (std::size_t i = 0; i < n; ++i) p.row_ptr[i + 1] += p.row_ptr[i];
  for (double& v : p.val) v /= total;
  return p;
}

RowMatrix BuildDenseP(const RowMatrix& x, double perplexity, unsigned threads) {
  const auto n = static_cast<std::size_t>(x.rows());
  RowMatrix cond(x.rows(), x.rows());
  cond.setZero();
  ParallelFor(n, threads, [&](std::size_t i) {
    std::vector<double> dist, row(n - 1);
    dist.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist.push_back(SquaredDistance(x, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    CalibrateRow(dist, perplexity, row);
    for (std::size_t j = 0, c = 0; j < n; ++j) {
      if (j != i) cond(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[c++];
    }
  });
  RowMatrix p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  return p;
}

class Gradient {
 public:
  virtual ~Gradient() = default;
  /// Writes dC/dy into `grad` for the given exaggeration factor.
  virtual void Compute(const RowMatrix& y, double exaggeration, RowMatrix& grad) = 0;
  virtual double Objective(const RowMatrix& y) = 0;
};

class ExactGradient final : public Gradient {
 public:
  ExactGradient(RowMatrix p, unsigned threads)
      : p_(std::move(p)), q_(p_.rows(), p_.cols()), row_sum_(static_cast<std::size_t>(p_.rows())), threads_(threads) {}

  void Compute(const RowMatrix& y, double exaggeration, RowMatrix& grad) override {
    const double z = FillQ(y);
    const auto n = static_cast<std::size_t>(y.rows());
    ParallelFor(n, threads_, [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      Vec3 g{};
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        if (j == r) continue;
        const double q = q_(r, j);
        const double mult = (exaggeration * p_(r, j) - q / z) * q;
        for (int a = 0; a < kEmbeddingDims; ++a) g[a] += mult * (y(r, a) - y(j, a));
      }
      for (int a = 0; a < kEmbeddingDims; ++a) grad(r, a) = 4.0 * g[a];
    });
  }

  double Objective(const RowMatrix& y) override {
    const double z = FillQ(y);
    const auto n = static_cast<std::size_t>(y.rows());
    std::vector<double> partial(n, 0.0);
    ParallelFor(n, threads_, [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        const double p = p_(r, j);
        if (j == r || p <= 0.0) continue;
        partial[i] += p * std::log(p / std::max(q_(r, j) / z, std::numeric_limits<double>::min()));
      }
    });
    double kl = 0.0;
    for (double v : partial) kl += v;
    return kl;
  }

 private:
  double FillQ(const RowMatrix& y) {
    const auto n = static_cast<std::size_t>(y.rows());
    ParallelFor(n, threads_, [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      double sum = 0.0;
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        if (j == r) {
          q_(r, j) = 0.0;
          continue;
        }
        const double q = 1.0 / (1.0 + (y.row(r) - y.row(j)).squaredNorm());
        q_(r, j) = q;
        sum += q;
      }
      row_sum_[i] = sum;
    });
    double z = 0.0;
    for (double v : row_sum_) z += v;
    return z;
  }

  RowMatrix p_;
  RowMatrix q_;
  std::vector<double> row_sum_;
  unsigned threads_;
};

class BarnesHutGradient final : public Gradient {
 public:
  BarnesHutGradient(SparseP p, double theta, unsigned threads)
      : p_(std::move(p)), theta_(theta), threads_(threads) {}

  void Compute(const RowMatrix& y, double exaggeration, RowMatrix& grad) override {
    const auto n = static_cast<std::size_t>(y.rows());
    Octree tree(y);
    std::vector<Vec3> neg(n, Vec3{});
    std::vector<double> sum_q(n, 0.0);
    std::vector<Vec3> attr(n, Vec3{});
    ParallelFor(n, threads_, [&](std::size_t i) {
      tree.Repulsion(i, theta_, neg[i], sum_q[i]);
      const auto r = static_cast<Eigen::Index>(i);
      for (std::size_t e = p_.row_ptr[i]; e < p_.row_ptr[i + 1]; ++e) {
        const auto j = static_cast<Eigen::Index>(p_.col[e]);
        Vec3 diff;
        double d2 = 0.0;
        for (int a = 0; a < kEmbeddingDims; ++a) {
          diff[a] = y(r, a) - y(j, a);
          d2 += diff[a] * diff[a];
        }
        const double mult = p_.val[e] / (1.0 + d2);
        for (int a = 0; a < kEmbeddingDims; ++a) attr[i][a] += mult * diff[a];
      }
    });
    double z = 0.0;
    for (double v : sum_q) z += v;
    for (std::size_t i = 0; i < n; ++i) {
      for (int a = 0; a < kEmbeddingDims; ++a) {
        grad(static_cast<Eigen::Index>(i), a) = 4.0 * (exaggeration * attr[i][a] - neg[i][a] / z);
      }
    }
  }

  double Objective(const RowMatrix& y) override {
    const auto n = static_cast<std::size_t>(y.rows());
    Octree tree(y);
    std::vector<double> sum_q(n, 0.0);
    std::vector<double> partial(n, 0.0);
    ParallelFor(n, threads_, [&](std::size_t i) {
      Vec3 unused{};
      tree.Repulsion(i, theta_, unused, sum_q[i]);
    });
    double z = 0.0;
    for (double v : sum_q) z += v;
    ParallelFor(n, threads_, [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      for (std::size_t e = p_.row_ptr[i]; e < p_.row_ptr[i + 1]; ++e) {
        const auto j = static_cast<Eigen::Index>(p_.col[e]);
        const double q = 1.0 / (1.0 + (y.row(r) - y.row(j)).squaredNorm()) / z;
        const double p = p_.val[e];
        if (p > 0.0) partial[i] += p * std::log(p / std::max(q, std::numeric_limits<double>::min()));
      }
    });
    double kl = 0.0;
    for (double v : partial) kl += v;
    return kl;
  }

 private:
  SparseP p_;
  double theta_;
  unsigned threads_;
};

}  // namespace

TsneResult ReduceTsne(const RowMatrix& points, const TsneOptions& opt) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n < 4) throw Error(Errc::kDegenerateData, "t-SNE needs at least 4 points");
  if (!points.allFinite()) throw Error(Errc::kNonFiniteValue, "t-SNE input");
  if (!(opt.perplexity > 0.0) || !(opt.perplexity < static_cast<double>(n - 1) / 3.0)) {
    throw Error(Errc::kPerplexityTooLarge,
                "perplexity " + std::to_string(opt.perplexity) + " needs to be below (n-1)/3 = " +
                    std::to_string(static_cast<double>(n - 1) / 3.0));
  }
  if (opt.iterations < 0 || opt.objective_every < 1) {
    throw Error(Errc::kBadParameter, "iterations must be >= 0 and objective_every >= 1");
  }

  TsneResult result;
  result.barnes_hut = n > opt.exact_limit;
  result.learning_rate =
      opt.learning_rate > 0.0 ? opt.learning_rate : std::max(static_cast<double>(n) / 12.0, 50.0);

  std::unique_ptr<Gradient> gradient;
  if (result.barnes_hut) {
    gradient = std::make_unique<BarnesHutGradient>(
        BuildSparseP(points, opt.perplexity, opt.seed ^ 0x5eedULL, opt.threads), opt.theta, opt.threads);
  } else {
    gradient = std::make_unique<ExactGradient>(BuildDenseP(points, opt.perplexity, opt.threads), opt.threads);
  }

  RowMatrix y(points.rows(), kEmbeddingDims);
  {
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> gauss(0.0, 1e-4);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (int a = 0; a < kEmbeddingDims; ++a) y(i, a) = gauss(rng);
    }
  }
  RowMatrix grad = RowMatrix::Zero(y.rows(), y.cols());
  RowMatrix update = RowMatrix::Zero(y.rows(), y.cols());
  RowMatrix gains = RowMatrix::Ones(y.rows(), y.cols());

  result.objective.emplace_back(0, gradient->Objective(y));
  for (int it = 0; it < opt.iterations; ++it) {
    const double exaggeration = it < opt.exaggeration_iterations ? opt.exaggeration : 1.0;
    const double momentum = it < opt.momentum_switch ? opt.initial_momentum : opt.final_momentum;
    gradient->Compute(y, exaggeration, grad);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (int a = 0; a < kEmbeddingDims; ++a) {
        double& g = gains(i, a);
        g = (grad(i, a) > 0.0) != (update(i, a) > 0.0) ? g + 0.2 : g * 0.8;
        g = std::max(g, 0.01);
        update(i, a) = momentum * update(i, a) - result.learning_rate * g * grad(i, a);
        y(i, a) += update(i, a);
      }
    }
    const Eigen::RowVectorXd mean = y.colwise().mean();
    y.rowwise() -= mean;
    if (opt.progress) opt.progress(it + 1);
    if ((it + 1) % opt.objective_every == 0 || it + 1 == opt.iterations) {
      result.objective.emplace_back(it + 1, gradient->Objective(y));
    }
  }
  result.embedding = std::move(y);
  return result;
}

}  // namespace sflens
