// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0
//
// doublep: generate workloads, inspect clusterings and run sparse-attention
// experiments against the full-attention reference.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "doublep/error.h"
#include "doublep/experiment.h"

namespace {

using namespace doublep;

struct WorkloadFlags {
  WorkloadSpec spec;
  std::string profile = "peaked";

  void add(CLI::App* app) {
    app->add_option("--context-len", spec.context_len, "Tokens per head");
    app->add_option("--head-dim", spec.head_dim, "Head dimension");
    app->add_option("--blobs", spec.num_blobs, "Key blobs per head");
    app->add_option("--blob-spread", spec.blob_spread,
                    "Per-coordinate key std-dev inside a blob");
    app->add_option("--blob-separation", spec.blob_separation,
                    "Norm of each blob center");
    app->add_option("--profile", profile, "peaked, heavy, uniform or mixed");
    app->add_option("--layers", spec.layers, "Layers");
    app->add_option("--kv-heads", spec.kv_heads, "KV heads per layer");
    app->add_option("--gqa-group", spec.gqa_group,
                    "Query heads per KV head");
    app->add_option("--steps", spec.steps, "Decode steps");
    app->add_option("--size-skew", spec.size_skew,
                    "Zipf exponent of blob sizes");
    app->add_option("--peak-logit-min", spec.peak_logit_min);
    app->add_option("--peak-logit-max", spec.peak_logit_max);
    app->add_option("--heavy-logit", spec.heavy_logit);
    app->add_option("--heavy-blobs", spec.heavy_blobs);
    app->add_option("--uniform-noise", spec.uniform_noise);
  }

  WorkloadSpec resolve(std::uint64_t seed, std::size_t sink,
                       std::size_t window) const {
    WorkloadSpec out = spec;
    out.tail_profile = parse_tail_profile(profile);
    out.seed = seed;
    out.sink = sink;
    out.window = window;
    return out;
  }
};

struct CommonFlags {
  std::string in;
  std::string out;
  std::string format = "csv";
  std::uint64_t seed = 0;
  std::size_t sink = 4;
  std::size_t window = 64;
  std::optional<std::size_t> clusters;
  std::optional<std::size_t> tokens_per_cluster;
  WorkloadFlags workload;

  void add(CLI::App* app, bool with_format) {
    app->add_option("--in", in, "DPKV input; a synthetic workload if omitted");
    app->add_option("--out", out, "Output path; stdout if omitted");
    if (with_format) {
      app->add_option("--format", format, "csv or json")
          ->check(CLI::IsMember({"csv", "json"}));
    }
    app->add_option("--seed", seed, "Workload and clustering seed");
    app->add_option("--sink", sink, "Always-exact leading tokens");
    app->add_option("--window", window, "Always-exact trailing tokens");
    auto* c = app->add_option("--clusters", clusters, "Clusters per head");
    auto* t = app->add_option("--tokens-per-cluster", tokens_per_cluster,
                              "Average tokens per cluster (default 32)");
    c->excludes(t);
    workload.add(app);
  }

  ClusterCountPolicy policy() const {
    if (clusters) return ClusterCountPolicy::explicit_count(*clusters);
    if (tokens_per_cluster) {
      return ClusterCountPolicy::tokens_per_cluster(*tokens_per_cluster);
    }
    return ClusterCountPolicy{};
  }

  ExperimentInput input() const {
    if (!in.empty()) return ExperimentInput::from_dump(in);
    return ExperimentInput::from_workload(workload.resolve(seed, sink, window));
  }

  void emit(const std::string& text) const {
    if (out.empty()) {
      std::cout << text;
    } else {
      write_file_atomic(out, text);
    }
  }
};

struct MethodFlags {
  std::string preset;
  double p1 = 0.95;
  double p2 = 0.7;
  std::size_t k = 256;
  std::size_t m = 8;
  std::optional<std::size_t> budget;
  double p = 0.95;
  double epsilon = 0.01;
  CLI::Option* p1_opt = nullptr;
  CLI::Option* p2_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "llama-default or qwen-default")
        ->check(CLI::IsMember({"llama-default", "qwen-default"}));
    p1_opt = app->add_option("--p1", p1, "Cluster-level mass threshold");
    p2_opt = app->add_option("--p2", p2, "Exact share of the retained mass");
    app->add_option("--k", k, "token_topk budget");
    app->add_option("--m", m, "cluster_topk budget");
    app->add_option("--budget", budget,
                    "token_topp_fixed candidate budget (default N/4)");
    app->add_option("--p", p, "Target mass");
    app->add_option("--epsilon", epsilon, "Error bound");
  }

  RunConfig config(const CommonFlags& common) const {
    RunConfig c;
    if (!preset.empty()) c.apply_preset(preset);
    // Sweeps register no --p1/--p2 here; their grid lists override later.
    const bool p1_given = p1_opt != nullptr && p1_opt->count() > 0;
    const bool p2_given = p2_opt != nullptr && p2_opt->count() > 0;
    if (preset.empty() || p1_given) c.p1 = p1;
    if (preset.empty() || p2_given) c.p2 = p2;
    c.k = k;
    c.m = m;
    c.budget = budget;
    c.p = p;
    c.epsilon = epsilon;
    c.cluster_policy = common.policy();
    c.sink = common.sink;
    c.window = common.window;
    c.seed = common.seed;
    return c;
  }
};

std::vector<RunConfig> expand_sweep(const RunConfig& base,
                                    const std::vector<std::string>& methods,
                                    const std::vector<double>& p1s,
                                    const std::vector<double>& p2s,
                                    const std::vector<std::size_t>& ks,
                                    const std::vector<std::size_t>& ms,
                                    const std::vector<std::size_t>& budgets) {
  std::vector<RunConfig> configs;
  for (const std::string& name : methods) {
    RunConfig c = base;
    c.method = parse_method(name);
    switch (c.method) {
      case Method::kFull:
        configs.push_back(c);
        break;
      case Method::kDoubleP:
        for (double p1 : p1s.empty() ? std::vector{base.p1} : p1s) {
          for (double p2 : p2s.empty() ? std::vector{base.p2} : p2s) {
            c.p1 = p1;
            c.p2 = p2;
            configs.push_back(c);
          }
        }
        break;
      case Method::kTokenTopK:
        for (std::size_t k : ks.empty() ? std::vector{base.k} : ks) {
          c.k = k;
          configs.push_back(c);
        }
        break;
      case Method::kClusterTopK:
        for (std::size_t m : ms.empty() ? std::vector{base.m} : ms) {
          c.m = m;
          configs.push_back(c);
        }
        break;
      case Method::kTokenTopPFixed:
        if (budgets.empty()) {
          configs.push_back(c);
        } else {
          for (std::size_t b : budgets) {
            c.budget = b;
            configs.push_back(c);
          }
        }
        break;
    }
  }
  return configs;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Hierarchical top-p sparse attention experiments"};
  app.require_subcommand(1);

  CommonFlags common;

  auto* gen = app.add_subcommand("gen", "Write a synthetic workload as DPKV");
  gen->add_option("--out", common.out, "Output DPKV path")->required();
  gen->add_option("--seed", common.seed, "Workload seed");
  gen->add_option("--sink", common.sink, "Reserved leading tokens");
  gen->add_option("--window", common.window, "Reserved trailing tokens");
  common.workload.add(gen);

  auto* cluster =
      app.add_subcommand("cluster", "Cluster a cache and report statistics");
  common.add(cluster, false);

  MethodFlags method_flags;
  std::string method = "doublep";
  auto* run = app.add_subcommand("run", "Run one method over every step");
  common.add(run, true);
  method_flags.add(run);
  run->add_option("--method", method,
                  "full, doublep, token_topk, cluster_topk, token_topp_fixed");

  std::vector<std::string> methods{"doublep"};
  std::vector<double> p1s;
  std::vector<double> p2s;
  std::vector<std::size_t> ks;
  std::vector<std::size_t> ms;
  std::vector<std::size_t> budgets;
  MethodFlags sweep_flags;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Aggregate a grid of configurations");
  common.add(sweep_cmd, true);
  sweep_cmd->add_option("--preset", sweep_flags.preset)
      ->check(CLI::IsMember({"llama-default", "qwen-default"}));
  sweep_cmd->add_option("--method", methods, "Comma-separated methods")
      ->delimiter(',');
  sweep_cmd->add_option("--p1", p1s, "Comma-separated p1 values")
      ->delimiter(',');
  sweep_cmd->add_option("--p2", p2s, "Comma-separated p2 values")
      ->delimiter(',');
  sweep_cmd->add_option("--k", ks, "Comma-separated token_topk budgets")
      ->delimiter(',');
  sweep_cmd->add_option("--m", ms, "Comma-separated cluster_topk budgets")
      ->delimiter(',');
  sweep_cmd->add_option("--budget", budgets,
                        "Comma-separated token_topp_fixed budgets")
      ->delimiter(',');
  sweep_cmd->add_option("--p", sweep_flags.p, "Target mass");

  std::string fig;
  FigureOptions fig_opts;
  std::string fig_preset;
  auto* figs = app.add_subcommand("figs", "Diagnostic tables");
  common.add(figs, true);
  figs->add_option("--fig", fig,
                   "budget-violations, recovered-mass, cluster-error or "
                   "min-clusters")
      ->required()
      ->check(CLI::IsMember({"budget-violations", "recovered-mass",
                             "cluster-error", "min-clusters"}));
  figs->add_option("--p", fig_opts.target, "Target mass");
  figs->add_option("--token-budgets", fig_opts.token_budgets,
                   "Comma-separated fixed token budgets")
      ->delimiter(',');
  figs->add_option("--budget-ratio", fig_opts.budget_ratio,
                   "Fixed candidate budget as a share of N");
  figs->add_option("--max-rank", fig_opts.max_rank, "Cluster ranks reported");
  figs->add_option("--epsilon", fig_opts.epsilon, "Error bound");
  figs->add_option("--preset", fig_preset)
      ->check(CLI::IsMember({"llama-default", "qwen-default"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  if (gen->parsed()) {
    const WorkloadSpec spec =
        common.workload.resolve(common.seed, common.sink, common.window);
    const auto [cache, trace] = generate(spec);
    write_dump(cache, trace, common.out);
    return 0;
  }

  const bool json = common.format == "json";
  if (cluster->parsed()) {
    ExperimentInput input = common.input();
    const ClusterCountPolicy policy = common.policy();
    const ClusteredCache& cc =
        input.clustering(policy, common.sink, common.window, common.seed);
    common.emit(cluster_stats_json(input.cache(), cc, policy, common.seed));
    return 0;
  }

  if (run->parsed()) {
    RunConfig config = method_flags.config(common);
    config.method = parse_method(method);
    ExperimentInput input = common.input();
    const auto records = doublep::run(config, input);
    common.emit(json ? records_to_json(records) : records_to_csv(records));
    return 0;
  }

  if (sweep_cmd->parsed()) {
    const RunConfig base = sweep_flags.config(common);
    const auto configs = expand_sweep(base, methods, p1s, p2s, ks, ms, budgets);
    ExperimentInput input = common.input();
    const auto rows = doublep::sweep(configs, input);
    common.emit(json ? sweep_to_json(rows) : sweep_to_csv(rows));
    return 0;
  }

  if (figs->parsed()) {
    if (fig_preset == "qwen-default") {
      fig_opts.doublep = DoublePConfig::qwen_default();
    }
    fig_opts.doublep.sink = common.sink;
    fig_opts.doublep.window = common.window;
    fig_opts.doublep.cluster_policy = common.policy();
    fig_opts.seed = common.seed;
    ExperimentInput input = common.input();
    Table table;
    if (fig == "budget-violations") {
      table = figure_budget_violations(input, fig_opts);
    } else if (fig == "recovered-mass") {
      table = figure_recovered_mass(input, fig_opts);
    } else if (fig == "cluster-error") {
      table = figure_cluster_error(input, fig_opts);
    } else {
      table = figure_min_clusters(input, fig_opts);
    }
    common.emit(json ? table.to_json() : table.to_csv());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
