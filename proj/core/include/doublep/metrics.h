// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "doublep/engine.h"

namespace doublep {

// One (layer, query head, step) measurement.
struct ExperimentRecord {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;  // query head
  std::uint32_t step = 0;
  std::string method;

  // Method parameters; unset when the method does not use them.
  std::optional<double> p1;
  std::optional<double> p2;
  std::optional<std::size_t> k;
  std::optional<std::size_t> m;
  std::optional<std::size_t> budget;

  std::size_t clusters_total = 0;
  std::size_t clusters_selected = 0;  // |C_p|
  std::size_t clusters_exact = 0;
  std::size_t exact_tokens = 0;
  double estimated_mass = 0.0;  // mass the method's own selection kept
  double recovered_exact_mass = 0.0;  // true mass of the exact tokens
  bool violation = false;
  double output_rel_error = 0.0;
};

// True attention mass (full normalizer) of plan.exact_tokens. The plan's
// exact tokens must already be resolved.
double recovered_mass(const SelectionPlan& plan, std::span<const float> q,
                      const HeadView& head);
double recovered_mass(const SelectionPlan& plan, std::span<const float> q,
                      const KvCache& cache, std::size_t layer,
                      std::size_t kv_head);

// Fraction of records whose recovered_exact_mass is below p.
double violation_rate(std::span<const ExperimentRecord> records, double p);

// |Z_i - Ẑ_i| / Z_total per cluster, listed in descending-estimate order.
// Z_total is the exact normalizer over every token of the head.
std::vector<double> cluster_approx_error(std::span<const float> q,
                                         const HeadView& head);
std::vector<double> cluster_approx_error(std::span<const float> q,
                                         const KvCache& cache,
                                         const ClusteredCache& cc,
                                         std::size_t layer,
                                         std::size_t kv_head);

struct MinClusters {
  std::size_t count = 0;
  bool attainable = true;  // false: even all-exact misses epsilon
};

// Brute force: the shortest prefix of the estimate order that, computed
// exactly with every other cluster approximated, keeps the output error
// within epsilon. Each prefix is re-evaluated from scratch.
MinClusters min_clusters_for_error(std::span<const float> q,
                                   const HeadView& head, double epsilon);
MinClusters min_clusters_for_error(std::span<const float> q,
                                   const KvCache& cache,
                                   const ClusteredCache& cc, std::size_t layer,
                                   std::size_t kv_head, double epsilon);

// ||a.o - b.o||_2 / max(||b.o||_2, 1e-12).
double output_error(const AttentionOutput& a, const AttentionOutput& b);

// Nearest-rank percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> sample, double q);

}  // namespace doublep
