// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "doublep/kvcache.h"

namespace doublep {

// One k-means cluster of a head's middle tokens. Metadata is kept in double so
// the centroid logit equals the mean of member logits up to double rounding.
struct Cluster {
  std::vector<std::uint32_t> members;  // ascending token indices
  std::vector<double> centroid;        // mean of member keys
  std::vector<double> value_sum;
  std::vector<double> value_mean;      // value_sum / size()

  std::size_t size() const { return members.size(); }
};

struct KMeansResult {
  std::vector<std::uint32_t> assignments;  // one compacted cluster id per point
  std::vector<double> centroids;           // num_clusters x dim, row-major
  std::size_t num_clusters = 0;
  // Sum of squared distances to the assigned centroid, one entry per Lloyd
  // iteration, evaluated after the centroid update.
  std::vector<double> objective_history;
};

inline constexpr int kDefaultKMeansIters = 25;
inline constexpr std::size_t kDefaultTokensPerCluster = 32;

// Lloyd's algorithm with k-means++ seeding over `num_points` rows of `points`.
// Clusters that end up empty are dropped, so num_clusters may be below k.
// Stops when no assignment changes or after max_iters iterations.
KMeansResult kmeans_fit(std::span<const float> points, std::size_t num_points,
                        std::size_t dim, std::size_t k, int max_iters,
                        std::uint64_t seed);

struct ClusterCountPolicy {
  enum class Kind { kExplicit, kTokensPerCluster };

  Kind kind = Kind::kTokensPerCluster;
  std::size_t value = kDefaultTokensPerCluster;

  static ClusterCountPolicy explicit_count(std::size_t k) {
    return {Kind::kExplicit, k};
  }
  static ClusterCountPolicy tokens_per_cluster(std::size_t tokens) {
    return {Kind::kTokensPerCluster, tokens};
  }

  // Requested cluster count for a middle region of `middle_len` tokens,
  // capped at one cluster per token.
  std::size_t resolve(std::size_t middle_len) const;
};

// Per-(layer, kv-head) clustering of the middle tokens [sink, N - window).
// Sink and window tokens are never clustered.
class ClusteredCache {
 public:
  ClusteredCache(const KvCache& source, std::size_t sink, std::size_t window);

  std::uint32_t num_layers() const { return num_layers_; }
  std::uint32_t num_kv_heads() const { return num_kv_heads_; }
  std::uint32_t head_dim() const { return head_dim_; }
  std::uint32_t context_len() const { return context_len_; }
  std::size_t sink() const { return sink_; }
  std::size_t window() const { return window_; }
  std::size_t middle_begin() const { return sink_; }
  std::size_t middle_end() const { return context_len_ - window_; }

  std::span<const Cluster> clusters(std::size_t layer, std::size_t head) const;
  std::vector<Cluster>& mutable_clusters(std::size_t layer, std::size_t head);

  // True when this clustering was built over a cache of the same shape.
  bool matches(const KvCache& cache) const;

 private:
  std::uint32_t num_layers_;
  std::uint32_t num_kv_heads_;
  std::uint32_t head_dim_;
  std::uint32_t context_len_;
  std::size_t sink_;
  std::size_t window_;
  std::vector<std::vector<Cluster>> heads_;
};

// Clusters the middle tokens of one head. `keys`/`values` are the head's full
// N x d matrices.
std::vector<Cluster> cluster_head(std::span<const float> keys,
                                  std::span<const float> values,
                                  std::size_t head_dim, std::size_t sink,
                                  std::size_t window, std::size_t k,
                                  int max_iters, std::uint64_t seed);

ClusteredCache build_clustered_cache(const KvCache& cache,
                                     ClusterCountPolicy policy,
                                     std::size_t sink, std::size_t window,
                                     std::uint64_t seed,
                                     int max_iters = kDefaultKMeansIters);

// Seed used for the k-means run of one (layer, head).
std::uint64_t head_seed(std::uint64_t seed, std::size_t layer,
                        std::size_t head);

}  // namespace doublep
