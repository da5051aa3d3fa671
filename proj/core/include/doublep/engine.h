// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "doublep/clustering.h"
#include "doublep/kvcache.h"
#include "doublep/selection.h"

namespace doublep {

// Thresholds and the always-exact region for hierarchical top-p attention.
// p2 > p1 is legal.
struct DoublePConfig {
  double p1 = 0.95;  // cluster-level mass to retain
  double p2 = 0.7;   // share of the retained mass computed token-exactly
  std::size_t sink = 4;
  std::size_t window = 64;
  ClusterCountPolicy cluster_policy;

  void validate() const;

  static DoublePConfig llama_default() { return with_thresholds(0.95, 0.7); }
  static DoublePConfig qwen_default() { return with_thresholds(0.99, 0.8); }
  static DoublePConfig with_thresholds(double p1, double p2) {
    DoublePConfig cfg;
    cfg.p1 = p1;
    cfg.p2 = p2;
    return cfg;
  }
};

// Read-only view of one kv head: its tokens, the clustering of its middle
// tokens and the exact region [0, sink) + [window_begin, context_len).
struct HeadView {
  std::span<const float> keys;    // context_len x head_dim
  std::span<const float> values;  // context_len x head_dim
  std::size_t head_dim = 0;
  std::size_t context_len = 0;
  std::span<const Cluster> clusters;
  std::size_t sink = 0;
  std::size_t window_begin = 0;

  std::span<const float> key(std::size_t token) const {
    return keys.subspan(token * head_dim, head_dim);
  }
  std::span<const float> value(std::size_t token) const {
    return values.subspan(token * head_dim, head_dim);
  }
};

HeadView head_view(const KvCache& cache, const ClusteredCache& cc,
                   std::size_t layer, std::size_t kv_head);

// Tokens only, no clusters and no exact region.
HeadView dense_view(const KvCache& cache, std::size_t layer,
                    std::size_t kv_head);

struct ClusterEstimate {
  std::vector<double> log_mass;      // centroid logit + log(size), per cluster
  std::vector<double> distribution;  // softmax of log_mass
  std::vector<std::uint32_t> order;  // cluster ids by distribution, descending
};

struct SelectionPlan {
  TopPResult stage1;                        // retained clusters
  std::vector<std::uint32_t> exact_clusters;   // prefix of stage1, Â order
  std::vector<std::uint32_t> approx_clusters;  // rest of stage1
  std::vector<std::uint32_t> exact_tokens;     // ascending; empty until resolved
  std::size_t cluster_count = 0;

  // Clusters outside stage1 contribute nothing.
  std::size_t dropped_clusters() const {
    return cluster_count - stage1.selected.size();
  }
};

struct AttentionOutput {
  std::vector<double> o;
  double log_normalizer = 0.0;
  std::size_t exact_token_count = 0;
  std::size_t approx_cluster_count = 0;
  double weight_sum = 0.0;  // sum of mixture weights; 1 up to rounding

  double normalizer() const;
};

// Exact softmax attention over every token.
AttentionOutput full_attention(std::span<const float> q,
                               const KvCache& cache, std::size_t layer,
                               std::size_t kv_head);
AttentionOutput full_attention(std::span<const float> q, const HeadView& head);

// True attention probabilities over all tokens of the head.
std::vector<double> attention_weights(std::span<const float> q,
                                      const HeadView& head);

ClusterEstimate estimate_cluster_distribution(std::span<const float> q,
                                              const ClusteredCache& cc,
                                              std::size_t layer,
                                              std::size_t kv_head);
ClusterEstimate estimate_cluster_distribution(std::span<const float> q,
                                              std::span<const Cluster> clusters,
                                              std::size_t head_dim);

// Two-stage plan over clusters. The first overload leaves exact_tokens empty;
// the second also resolves it against the head.
SelectionPlan plan_selection(const ClusterEstimate& est,
                             const DoublePConfig& cfg);
SelectionPlan plan_selection(const ClusterEstimate& est,
                             const DoublePConfig& cfg, const HeadView& head);

// Plan that retains every cluster and computes the first `exact_count`
// clusters of est.order exactly.
SelectionPlan prefix_plan(const ClusterEstimate& est, std::size_t exact_count,
                          const HeadView& head);

// Sink + window + members of exact_clusters, ascending.
std::vector<std::uint32_t> resolve_exact_tokens(const SelectionPlan& plan,
                                                const HeadView& head);

// Contiguous gather of the entries one sparse pass reads. Exact tokens enter
// with bias 0 and their own value; approximated clusters enter with their
// centroid as key, bias log(size) and the value mean.
struct MixedBuffer {
  std::size_t head_dim = 0;
  std::size_t rows = 0;
  std::size_t exact_rows = 0;
  std::vector<double> keys;    // rows x head_dim
  std::vector<double> values;  // rows x head_dim
  std::vector<double> bias;    // rows
};

MixedBuffer gather_mixed(const SelectionPlan& plan, const HeadView& head);

// Single online-softmax pass over a mixed buffer.
AttentionOutput weighted_attention(std::span<const float> q,
                                   const MixedBuffer& buffer);

AttentionOutput sparse_attention(std::span<const float> q,
                                 const KvCache& cache,
                                 const ClusteredCache& cc,
                                 const SelectionPlan& plan, std::size_t layer,
                                 std::size_t kv_head);
AttentionOutput sparse_attention(std::span<const float> q,
                                 const HeadView& head,
                                 const SelectionPlan& plan);

struct DecodeResult {
  AttentionOutput output;
  SelectionPlan plan;
  ClusterEstimate estimate;
};

DecodeResult decode_step(std::span<const float> q, const KvCache& cache,
                         const ClusteredCache& cc, const DoublePConfig& cfg,
                         std::size_t layer, std::size_t kv_head);
DecodeResult decode_step(std::span<const float> q, const HeadView& head,
                         const DoublePConfig& cfg);

// Output of a baseline together with the true attention mass (under the full
// normalizer) of the tokens it attended to exactly.
struct BaselineOutput {
  AttentionOutput output;
  double true_mass = 0.0;
  double selection_mass = 0.0;  // mass the method believed it kept
  std::vector<std::uint32_t> tokens;
};

// Oracle-score fixed-budget top-k: exact attention over the k tokens with the
// largest true weight, renormalized over that subset.
BaselineOutput baseline_token_topk(std::span<const float> q,
                                   const HeadView& head, std::size_t k);
BaselineOutput baseline_token_topk(std::span<const float> q,
                                   const KvCache& cache, std::size_t layer,
                                   std::size_t kv_head, std::size_t k);

// Fixed cluster budget: the m clusters with the largest estimate are exact,
// every other cluster is approximated by its centroid.
BaselineOutput baseline_cluster_topk(std::span<const float> q,
                                     const HeadView& head, std::size_t m);
BaselineOutput baseline_cluster_topk(std::span<const float> q,
                                     const KvCache& cache,
                                     const ClusteredCache& cc,
                                     std::size_t layer, std::size_t kv_head,
                                     std::size_t m);

// Select-then-prune under a fixed candidate budget: candidates are the top-B
// tokens of the true distribution, and the shortest candidate prefix holding
// p of the full attention mass is kept. When the candidates hold less than p,
// all B are kept. selection_mass is the kept share of the candidate mass.
BaselineOutput baseline_token_topp_fixed_budget(std::span<const float> q,
                                                const HeadView& head,
                                                std::size_t budget, double p);
BaselineOutput baseline_token_topp_fixed_budget(std::span<const float> q,
                                                const KvCache& cache,
                                                std::size_t layer,
                                                std::size_t kv_head,
                                                std::size_t budget, double p);

// One kv head whose cache keeps growing during decode. New tokens join the
// sliding window; a token pushed out of the window becomes a singleton
// cluster in a residual pool and is never re-clustered.
//
// Not thread-safe: one writer per head.
class GrowingHead {
 public:
  GrowingHead(const KvCache& cache, const ClusteredCache& cc,
              std::size_t layer, std::size_t kv_head);

  void append(std::span<const float> key, std::span<const float> value);

  HeadView view() const;
  std::size_t context_len() const { return keys_.size() / head_dim_; }
  std::size_t residual_count() const {
    return clusters_.size() - prefill_clusters_;
  }

 private:
  std::size_t head_dim_;
  std::size_t sink_;
  std::size_t window_;
  std::size_t window_begin_;
  std::size_t prefill_clusters_;
  std::vector<float> keys_;
  std::vector<float> values_;
  std::vector<Cluster> clusters_;
};

}  // namespace doublep
