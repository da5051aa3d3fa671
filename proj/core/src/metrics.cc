// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/metrics.h"

#include <algorithm>
#include <cmath>

#include "doublep/error.h"
#include "doublep/numerics.h"

namespace doublep {

double recovered_mass(const SelectionPlan& plan, std::span<const float> q,
                      const HeadView& head) {
  const std::vector<double> weights = attention_weights(q, head);
  double mass = 0.0;
  for (std::uint32_t t : plan.exact_tokens) {
    Require(t < weights.size(), "plan token out of range");
    mass += weights[t];
  }
  return std::min(mass, 1.0);
}

double recovered_mass(const SelectionPlan& plan, std::span<const float> q,
                      const KvCache& cache, std::size_t layer,
                      std::size_t kv_head) {
  return recovered_mass(plan, q, dense_view(cache, layer, kv_head));
}

double violation_rate(std::span<const ExperimentRecord> records, double p) {
  Require(!records.empty(), "no records");
  const auto violating = std::count_if(
      records.begin(), records.end(), [p](const ExperimentRecord& r) {
        return r.recovered_exact_mass < p;
      });
  return static_cast<double>(violating) / static_cast<double>(records.size());
}

std::vector<double> cluster_approx_error(std::span<const float> q,
                                         const HeadView& head) {
  const ClusterEstimate est =
      estimate_cluster_distribution(q, head.clusters, head.head_dim);
  std::vector<double> logits(head.context_len);
  for (std::size_t t = 0; t < head.context_len; ++t) {
    logits[t] = dot_scaled(q, head.key(t), head.head_dim);
  }
  const double log_total = log_sum_exp(logits);

  std::vector<double> errors;
  errors.reserve(est.order.size());
  std::vector<double> member_logits;
  for (std::uint32_t id : est.order) {
    const Cluster& c = head.clusters[id];
    member_logits.clear();
    for (std::uint32_t t : c.members) member_logits.push_back(logits[t]);
    const double exact = std::exp(log_sum_exp(member_logits) - log_total);
    const double approx = std::exp(est.log_mass[id] - log_total);
    errors.push_back(std::abs(exact - approx));
  }
  return errors;
}

std::vector<double> cluster_approx_error(std::span<const float> q,
                                         const KvCache& cache,
                                         const ClusteredCache& cc,
                                         std::size_t layer,
                                         std::size_t kv_head) {
  return cluster_approx_error(q, head_view(cache, cc, layer, kv_head));
}

MinClusters min_clusters_for_error(std::span<const float> q,
                                   const HeadView& head, double epsilon) {
  Require(epsilon > 0.0, "epsilon must be positive");
  const AttentionOutput reference = full_attention(q, head);
  const ClusterEstimate est =
      estimate_cluster_distribution(q, head.clusters, head.head_dim);
  const std::size_t total = est.order.size();
  for (std::size_t prefix = 0; prefix <= total; ++prefix) {
    const SelectionPlan plan = prefix_plan(est, prefix, head);
    const AttentionOutput out = sparse_attention(q, head, plan);
    if (output_error(out, reference) <= epsilon) return {prefix, true};
  }
  return {total, false};
}

MinClusters min_clusters_for_error(std::span<const float> q,
                                   const KvCache& cache,
                                   const ClusteredCache& cc, std::size_t layer,
                                   std::size_t kv_head, double epsilon) {
  return min_clusters_for_error(q, head_view(cache, cc, layer, kv_head),
                                epsilon);
}

double output_error(const AttentionOutput& a, const AttentionOutput& b) {
  Require(a.o.size() == b.o.size(), "dimension mismatch");
  double diff = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < a.o.size(); ++i) {
    const double delta = a.o[i] - b.o[i];
    diff += delta * delta;
    ref += b.o[i] * b.o[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

double percentile(std::vector<double> sample, double q) {
  Require(!sample.empty(), "empty sample");
  Require(q >= 0.0 && q <= 1.0, "percentile must lie in [0, 1]");
  std::sort(sample.begin(), sample.end());
  const double rank = std::ceil(q * static_cast<double>(sample.size()));
  const std::size_t index =
      rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return sample[std::min(index, sample.size() - 1)];
}

}  // namespace doublep
