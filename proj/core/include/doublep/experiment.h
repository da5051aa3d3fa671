// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "doublep/clustering.h"
#include "doublep/engine.h"
#include "doublep/kvcache.h"
#include "doublep/metrics.h"
#include "doublep/workload.h"

namespace doublep {

enum class Method { kFull, kDoubleP, kTokenTopK, kClusterTopK, kTokenTopPFixed };

Method parse_method(std::string_view name);
std::string_view to_string(Method method);

enum class OutputFormat { kCsv, kJson };

OutputFormat parse_format(std::string_view name);

// One experiment: exactly one method and its parameters.
struct RunConfig {
  Method method = Method::kDoubleP;
  double p1 = 0.95;
  double p2 = 0.7;
  std::size_t k = 256;        // token_topk budget
  std::size_t m = 8;          // cluster_topk budget
  std::optional<std::size_t> budget;  // token_topp_fixed; default N / 4
  double p = 0.95;            // target mass for violations / fixed-budget top-p
  double epsilon = 0.01;
  ClusterCountPolicy cluster_policy;
  std::size_t sink = 4;
  std::size_t window = 64;
  std::uint64_t seed = 0;

  // Named thresholds: "llama-default" (0.95, 0.7), "qwen-default" (0.99, 0.8).
  void apply_preset(std::string_view preset);
};

// A loaded cache and trace plus clusterings built on demand. Clusterings are
// memoized per (policy, sink, window, seed) so sweeps cluster once.
class ExperimentInput {
 public:
  ExperimentInput(KvCache cache, QueryTrace trace);

  static ExperimentInput from_dump(const std::filesystem::path& path);
  static ExperimentInput from_workload(const WorkloadSpec& spec);

  const KvCache& cache() const { return cache_; }
  const QueryTrace& trace() const { return trace_; }

  const ClusteredCache& clustering(const ClusterCountPolicy& policy,
                                   std::size_t sink, std::size_t window,
                                   std::uint64_t seed);

 private:
  using Key = std::tuple<int, std::size_t, std::size_t, std::size_t,
                         std::uint64_t>;
  KvCache cache_;
  QueryTrace trace_;
  std::map<Key, std::unique_ptr<ClusteredCache>> clusterings_;
};

// One record per (layer, query head, step), in that order. The full-attention
// reference is computed for every record.
std::vector<ExperimentRecord> run(const RunConfig& config,
                                  ExperimentInput& input);

struct SweepRow {
  RunConfig config;
  std::size_t records = 0;
  double mean_rel_err = 0.0;
  double p50_rel_err = 0.0;
  double p90_rel_err = 0.0;
  double p99_rel_err = 0.0;
  double max_rel_err = 0.0;
  double mean_exact_tokens = 0.0;
  double mean_budget_ratio = 0.0;  // exact tokens / context length
  double violation_rate = 0.0;     // share of records flagged as violations
  double mean_est_mass = 0.0;
  double mean_recovered_mass = 0.0;
};

SweepRow aggregate(const RunConfig& config,
                   std::span<const ExperimentRecord> records,
                   std::size_t context_len);

std::vector<SweepRow> sweep(std::span<const RunConfig> configs,
                            ExperimentInput& input);

// Serialization. CSV and JSON carry identical values: numbers are written in
// shortest round-trip form in both.
std::string records_to_csv(std::span<const ExperimentRecord> records);
std::string records_to_json(std::span<const ExperimentRecord> records);
std::string sweep_to_csv(std::span<const SweepRow> rows);
std::string sweep_to_json(std::span<const SweepRow> rows);

// Clustering statistics as a JSON document.
std::string cluster_stats_json(const KvCache& cache, const ClusteredCache& cc,
                               const ClusterCountPolicy& policy,
                               std::uint64_t seed);

// Tables behind the diagnostic figures.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::string to_csv() const;
  std::string to_json() const;
};

struct FigureOptions {
  double target = 0.95;
  std::vector<std::size_t> token_budgets = {64, 256, 1024};
  double budget_ratio = 0.25;  // candidate budget for the fixed-budget table
  std::size_t max_rank = 16;   // cluster ranks reported in the error table
  double epsilon = 0.05;
  DoublePConfig doublep = DoublePConfig::llama_default();
  std::uint64_t seed = 0;
};

// Violation rate for each fixed token budget plus the adaptive top-p budget.
Table figure_budget_violations(ExperimentInput& input,
                               const FigureOptions& opts);
// Recovered mass vs. budget ratio under a fixed candidate budget.
Table figure_recovered_mass(ExperimentInput& input, const FigureOptions& opts);
// Per-cluster approximation error by estimate rank.
Table figure_cluster_error(ExperimentInput& input, const FigureOptions& opts);
// Minimum exact clusters for an error bound vs. the stage-2 selection.
Table figure_min_clusters(ExperimentInput& input, const FigureOptions& opts);

// Formats a double in shortest round-trip form.
std::string format_number(double value);

// Writes through a sibling temporary file and a rename, so a failure never
// leaves a partial file at `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

}  // namespace doublep
