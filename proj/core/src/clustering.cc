// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/clustering.h"

#include <algorithm>
#include <limits>
#include <random>

#include "doublep/error.h"

namespace doublep {
namespace {

double squared_distance(std::span<const float> x, std::span<const double> c) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = static_cast<double>(x[i]) - c[i];
    acc += diff * diff;
  }
  return acc;
}

std::vector<double> kmeans_plus_plus(std::span<const float> points,
                                     std::size_t n, std::size_t dim,
                                     std::size_t k, std::mt19937_64& rng) {
  std::vector<double> centroids(k * dim);
  auto row = [&](std::size_t i) { return points.subspan(i * dim, dim); };
  auto set_center = [&](std::size_t c, std::size_t point) {
    auto src = row(point);
    std::copy(src.begin(), src.end(), centroids.begin() + c * dim);
  };

  set_center(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    const std::span<const double> prev(centroids.data() + (c - 1) * dim, dim);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(row(i), prev));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target =
          std::uniform_real_distribution<double>(0.0, total)(rng);
      bool found = false;
      for (std::size_t i = 0; i < n && !found; ++i) {
        if (nearest[i] <= 0.0) continue;
        pick = i;  // last positive-weight point absorbs rounding slack
        if (target < nearest[i]) {
          found = true;
        } else {
          target -= nearest[i];
        }
      }
    } else {
      // Every point coincides with an existing center.
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    set_center(c, pick);
  }
  return centroids;
}

// Nearest centroid per point, lowest index on ties. Returns the objective.
double assign(std::span<const float> points, std::size_t n, std::size_t dim,
              std::span<const double> centroids, std::size_t k,
              std::vector<std::uint32_t>& assignments) {
  double objective = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = points.subspan(i * dim, dim);
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double dist = squared_distance(x, centroids.subspan(c * dim, dim));
      if (dist < best) {
        best = dist;
        best_c = static_cast<std::uint32_t>(c);
      }
    }
    assignments[i] = best_c;
    objective += best;
  }
  return objective;
}

// Recomputes centroids as member means and drops empty clusters, compacting
// ids in order. Returns the new cluster count.
std::size_t update_means(std::span<const float> points, std::size_t n,
                         std::size_t dim, std::size_t k,
                         std::vector<std::uint32_t>& assignments,
                         std::vector<double>& centroids) {
  std::vector<double> sums(k * dim, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = assignments[i];
    ++counts[c];
    for (std::size_t j = 0; j < dim; ++j) {
      sums[c * dim + j] += static_cast<double>(points[i * dim + j]);
    }
  }
  std::vector<std::uint32_t> remap(k, 0);
  std::size_t live = 0;
  centroids.assign(0, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    remap[c] = static_cast<std::uint32_t>(live++);
    for (std::size_t j = 0; j < dim; ++j) {
      centroids.push_back(sums[c * dim + j] / static_cast<double>(counts[c]));
    }
  }
  if (live != k) {
    for (auto& a : assignments) a = remap[a];
  }
  return live;
}

double objective_of(std::span<const float> points, std::size_t n,
                    std::size_t dim, std::span<const double> centroids,
                    std::span<const std::uint32_t> assignments) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += squared_distance(points.subspan(i * dim, dim),
                              centroids.subspan(assignments[i] * dim, dim));
  }
  return total;
}

}  // namespace

KMeansResult kmeans_fit(std::span<const float> points, std::size_t num_points,
                        std::size_t dim, std::size_t k, int max_iters,
                        std::uint64_t seed) {
  Require(num_points >= 1 && dim >= 1, "kmeans needs at least one point");
  Require(points.size() == num_points * dim, "dimension mismatch");
  Require(k >= 1, "cluster count must be positive");
  Require(k <= num_points, "more clusters than points");
  Require(max_iters >= 1, "max_iters must be positive");

  std::mt19937_64 rng(seed);
  KMeansResult result;
  result.centroids = kmeans_plus_plus(points, num_points, dim, k, rng);
  result.num_clusters = k;
  result.assignments.assign(num_points, 0);

  std::vector<std::uint32_t> previous;
  for (int iter = 0; iter < max_iters; ++iter) {
    assign(points, num_points, dim, result.centroids, result.num_clusters,
           result.assignments);
    const bool changed = iter == 0 || result.assignments != previous;
    result.num_clusters =
        update_means(points, num_points, dim, result.num_clusters,
                     result.assignments, result.centroids);
    result.objective_history.push_back(objective_of(
        points, num_points, dim, result.centroids, result.assignments));
    if (!changed) break;
    previous = result.assignments;
  }
  return result;
}

std::size_t ClusterCountPolicy::resolve(std::size_t middle_len) const {
  Require(value >= 1, "cluster policy value must be positive");
  if (kind == Kind::kExplicit) {
    return std::max<std::size_t>(1, std::min(value, middle_len));
  }
  return std::max<std::size_t>(1, (middle_len + value - 1) / value);
}

ClusteredCache::ClusteredCache(const KvCache& source, std::size_t sink,
                               std::size_t window)
    : num_layers_(source.num_layers()),
      num_kv_heads_(source.num_kv_heads()),
      head_dim_(source.head_dim()),
      context_len_(source.context_len()),
      sink_(sink),
      window_(window),
      heads_(std::size_t{num_layers_} * num_kv_heads_) {
  Require(sink + window < context_len_, "no middle tokens to cluster");
}

std::span<const Cluster> ClusteredCache::clusters(std::size_t layer,
                                                  std::size_t head) const {
  Require(layer < num_layers_ && head < num_kv_heads_,
          "layer/head out of range");
  return heads_[layer * num_kv_heads_ + head];
}

std::vector<Cluster>& ClusteredCache::mutable_clusters(std::size_t layer,
                                                       std::size_t head) {
  Require(layer < num_layers_ && head < num_kv_heads_,
          "layer/head out of range");
  return heads_[layer * num_kv_heads_ + head];
}

bool ClusteredCache::matches(const KvCache& cache) const {
  return cache.num_layers() == num_layers_ &&
         cache.num_kv_heads() == num_kv_heads_ &&
         cache.head_dim() == head_dim_ && cache.context_len() == context_len_;
}

std::vector<Cluster> cluster_head(std::span<const float> keys,
                                  std::span<const float> values,
                                  std::size_t head_dim, std::size_t sink,
                                  std::size_t window, std::size_t k,
                                  int max_iters, std::uint64_t seed) {
  Require(head_dim >= 1 && keys.size() % head_dim == 0 &&
              values.size() == keys.size(),
          "dimension mismatch");
  const std::size_t n = keys.size() / head_dim;
  Require(sink + window < n, "no middle tokens to cluster");
  const std::size_t middle = n - sink - window;

  const KMeansResult fit =
      kmeans_fit(keys.subspan(sink * head_dim, middle * head_dim), middle,
                 head_dim, k, max_iters, seed);

  std::vector<Cluster> clusters(fit.num_clusters);
  for (std::size_t c = 0; c < fit.num_clusters; ++c) {
    clusters[c].centroid.assign(
        fit.centroids.begin() + static_cast<std::ptrdiff_t>(c * head_dim),
        fit.centroids.begin() + static_cast<std::ptrdiff_t>((c + 1) * head_dim));
    clusters[c].value_sum.assign(head_dim, 0.0);
  }
  for (std::size_t i = 0; i < middle; ++i) {
    Cluster& cl = clusters[fit.assignments[i]];
    const std::size_t token = sink + i;
    cl.members.push_back(static_cast<std::uint32_t>(token));
    for (std::size_t j = 0; j < head_dim; ++j) {
      cl.value_sum[j] += static_cast<double>(values[token * head_dim + j]);
    }
  }
  for (Cluster& cl : clusters) {
    cl.value_mean.resize(head_dim);
    const double s = static_cast<double>(cl.size());
    for (std::size_t j = 0; j < head_dim; ++j) {
      cl.value_mean[j] = cl.value_sum[j] / s;
    }
  }
  return clusters;
}

std::uint64_t head_seed(std::uint64_t seed, std::size_t layer,
                        std::size_t head) {
  // splitmix64 over the (seed, layer, head) triple.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (1 + layer * 65537 + head);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

ClusteredCache build_clustered_cache(const KvCache& cache,
                                     ClusterCountPolicy policy,
                                     std::size_t sink, std::size_t window,
                                     std::uint64_t seed, int max_iters) {
  ClusteredCache cc(cache, sink, window);
  const std::size_t k = policy.resolve(cc.middle_end() - cc.middle_begin());
  for (std::uint32_t layer = 0; layer < cache.num_layers(); ++layer) {
    for (std::uint32_t head = 0; head < cache.num_kv_heads(); ++head) {
      cc.mutable_clusters(layer, head) =
          cluster_head(cache.keys(layer, head), cache.values(layer, head),
                       cache.head_dim(), sink, window, k, max_iters,
                       head_seed(seed, layer, head));
    }
  }
  return cc;
}

}  // namespace doublep
