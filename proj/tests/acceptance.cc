// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "doublep/experiment.h"
#include "doublep/selection.h"

namespace doublep {
namespace {

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* format, double a, double b = 0, double c = 0,
                double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

std::vector<std::uint32_t> prefix_oracle(const std::vector<double>& probs,
                                         double p) {
  std::vector<std::uint32_t> order(probs.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return probs[a] > probs[b];
  });
  double total = 0.0;
  for (double x : probs) total += x;
  if (p >= 1.0) return order;
  double mass = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    mass += probs[order[j]] / total;
    if (mass >= p) {
      order.resize(j + 1);
      return order;
    }
  }
  return order;
}

void exactness_collapse() {
  const auto start = std::chrono::steady_clock::now();
  const std::uint32_t lengths[] = {256, 1024, 4096};
  const std::uint32_t dims[] = {16, 64};
  const TailProfile profiles[] = {TailProfile::kPeaked, TailProfile::kHeavy,
                                  TailProfile::kUniform, TailProfile::kMixed};
  double worst = 0.0;
  std::size_t steps = 0;
  for (std::uint64_t w = 0; w < 50; ++w) {
    WorkloadSpec spec;
    spec.context_len = lengths[w % 3];
    spec.head_dim = dims[(w / 3) % 2];
    spec.tail_profile = profiles[w % 4];
    spec.kv_heads = 2;
    spec.gqa_group = 2;
    spec.steps = 4;
    spec.seed = 1000 + w;
    ExperimentInput input = ExperimentInput::from_workload(spec);
    RunConfig config;
    config.p1 = 1.0;
    config.p2 = 1.0;
    config.seed = w;
    for (const ExperimentRecord& r : run(config, input)) {
      worst = std::max(worst, r.output_rel_error);
      ++steps;
    }
  }
  const double seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start)
                             .count();
  report(worst <= 1e-5 && seconds <= 120.0, "exactness_collapse",
         fmt("50 workloads, %.0f steps, max rel err %.3g, %.1f s",
             static_cast<double>(steps), worst, seconds));
}

void jensen_bound() {
  std::size_t pairs = 0;
  std::size_t violations = 0;
  double worst_ratio = 0.0;
  for (std::uint64_t w = 0; pairs < 12000; ++w) {
    WorkloadSpec spec;
    spec.context_len = 1024;
    spec.head_dim = w % 2 == 0 ? 16 : 64;
    spec.tail_profile = TailProfile::kMixed;
    spec.kv_heads = 2;
    spec.gqa_group = 2;
    spec.steps = 8;
    spec.blob_spread = 0.5 + 0.25 * static_cast<double>(w % 5);
    spec.seed = 2000 + w;
    const auto [cache, trace] = generate(spec);
    const ClusteredCache cc =
        build_clustered_cache(cache, ClusterCountPolicy{}, 4, 64, w);
    const long double scale =
        1.0L / std::sqrt(static_cast<long double>(spec.head_dim));
    for (std::uint32_t h = 0; h < trace.num_query_heads(); ++h) {
      const std::uint32_t kv = trace.kv_head_for(h);
      for (std::uint32_t s = 0; s < trace.num_steps(); ++s) {
        const auto q = trace.query(0, s, h);
        const ClusterEstimate est = estimate_cluster_distribution(q, cc, 0, kv);
        const auto clusters = cc.clusters(0, kv);
        for (std::size_t i = 0; i < clusters.size(); ++i) {
          long double z = 0.0L;
          for (std::uint32_t t : clusters[i].members) {
            const auto key = cache.key(0, kv, t);
            long double dot = 0.0L;
            for (std::size_t j = 0; j < key.size(); ++j) {
              dot += static_cast<long double>(q[j]) * key[j];
            }
            z += std::exp(dot * scale);
          }
          const long double z_hat = std::exp(
              static_cast<long double>(est.log_mass[i]));
          const double ratio = static_cast<double>(z_hat / z);
          worst_ratio = std::max(worst_ratio, ratio);
          if (z_hat > z * (1.0L + 1e-6L)) ++violations;
          ++pairs;
        }
      }
    }
  }
  report(violations == 0, "jensen_bound",
         fmt("%.0f pairs, %.0f violations, max Zhat/Z %.9f",
             static_cast<double>(pairs), static_cast<double>(violations),
             worst_ratio));
}

void top_p_oracle() {
  std::mt19937_64 rng(3000);
  std::uniform_int_distribution<std::size_t> len(1, 64);
  std::uniform_real_distribution<double> pick_p(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::size_t mismatches = 0;
  std::size_t sorted_mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> probs(len(rng));
    double total = 0.0;
    for (double& x : probs) {
      x = std::pow(expo(rng), 3.0);
      total += x;
    }
    for (double& x : probs) x /= total;
    double p = pick_p(rng);
    if (p == 0.0 || trial % 50 == 0) p = 1.0;
    const TopPResult r = top_p_select(probs, p);
    if (r.selected != prefix_oracle(probs, p)) ++mismatches;
    std::vector<double> sorted = probs;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (top_p_select_sorted(sorted, p) != r.selected.size()) {
      ++sorted_mismatches;
    }
  }
  report(mismatches == 0 && sorted_mismatches == 0, "top_p_oracle",
         fmt("10000 vectors, %.0f oracle mismatches, %.0f sorted mismatches",
             static_cast<double>(mismatches),
             static_cast<double>(sorted_mismatches)));
}

void stage1_guarantee() {
  std::size_t steps = 0;
  std::size_t violations = 0;
  for (std::uint64_t w = 0; w < 4; ++w) {
    WorkloadSpec spec;
    spec.context_len = w % 2 == 0 ? 1024 : 2048;
    spec.head_dim = 32;
    spec.tail_profile = TailProfile::kMixed;
    spec.kv_heads = 3;
    spec.gqa_group = 2;
    spec.steps = 8;
    spec.seed = 4000 + w;
    ExperimentInput input = ExperimentInput::from_workload(spec);
    std::vector<RunConfig> configs;
    for (double p1 : {0.5, 0.8, 0.9, 0.95, 0.99, 1.0}) {
      for (double p2 : {0.3, 0.5, 0.7, 0.9, 1.0}) {
        RunConfig c;
        c.p1 = p1;
        c.p2 = p2;
        c.seed = w;
        configs.push_back(c);
      }
    }
    for (const RunConfig& c : configs) {
      for (const ExperimentRecord& r : run(c, input)) {
        ++steps;
        if (r.estimated_mass < c.p1) ++violations;
      }
    }
  }
  report(violations == 0, "stage1_guarantee",
         fmt("%.0f decode steps over a 6x5 (p1, p2) grid, %.0f violations",
             static_cast<double>(steps), static_cast<double>(violations)));
}

void fixed_budget_failure() {
  WorkloadSpec spec;
  spec.context_len = 2048;
  spec.head_dim = 64;
  spec.tail_profile = TailProfile::kMixed;
  spec.kv_heads = 8;
  spec.gqa_group = 4;
  spec.steps = 64;
  spec.seed = 5000;
  ExperimentInput input = ExperimentInput::from_workload(spec);
  FigureOptions opts;
  opts.token_budgets = {64, 256, 1024};
  const Table t = figure_budget_violations(input, opts);
  bool ok = t.rows.size() == 4;
  std::string detail = "32 heads x 64 steps, N=2048;";
  for (const auto& row : t.rows) {
    const double rate = std::stod(row[2]);
    const bool adaptive = row[0] == "adaptive";
    ok = ok && (adaptive ? rate == 0.0 : rate > 0.0);
    detail += " " + (adaptive ? std::string("adaptive") : "k=" + row[1]) +
              " rate " + fmt("%.4f", rate);
  }
  report(ok, "fixed_budget_failure", detail);
}

double share_recovering(TailProfile profile, bool at_least) {
  std::size_t hits = 0;
  std::size_t steps = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    WorkloadSpec spec;
    spec.context_len = 1024;
    spec.head_dim = 64;
    spec.tail_profile = profile;
    spec.kv_heads = 2;
    spec.gqa_group = 2;
    spec.steps = 8;
    spec.seed = 6000 + seed;
    ExperimentInput input = ExperimentInput::from_workload(spec);
    FigureOptions opts;
    opts.budget_ratio = 0.25;
    for (const auto& row : figure_recovered_mass(input, opts).rows) {
      const double mass = std::stod(row[5]);
      hits += (at_least ? mass >= 0.95 : mass < 0.95) ? 1 : 0;
      ++steps;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(steps);
}

void fixed_candidate_budget() {
  const double uniform_fail = share_recovering(TailProfile::kUniform, false);
  const double peaked_ok = share_recovering(TailProfile::kPeaked, true);
  report(uniform_fail >= 0.9 && peaked_ok >= 0.9, "fixed_candidate_budget",
         fmt("B=N/4: uniform below 0.95 on %.3f of steps, peaked at or above "
             "0.95 on %.3f of steps",
             uniform_fail, peaked_ok));
}

void min_cluster_tracking() {
  std::size_t steps = 0;
  std::size_t covered = 0;
  std::vector<double> ratios;
  const DoublePConfig cfg = DoublePConfig::llama_default();
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    WorkloadSpec spec;
    spec.context_len = 512u << (seed % 4);
    spec.head_dim = 64;
    spec.tail_profile = TailProfile::kMixed;
    spec.kv_heads = 3;
    spec.gqa_group = 2;
    spec.steps = 8;
    spec.seed = 7000 + seed / 4;
    const auto [cache, trace] = generate(spec);
    const ClusteredCache cc =
        build_clustered_cache(cache, cfg.cluster_policy, cfg.sink, cfg.window,
                              seed);
    for (std::uint32_t h = 0; h < trace.num_query_heads(); ++h) {
      const HeadView view = head_view(cache, cc, 0, trace.kv_head_for(h));
      for (std::uint32_t s = 0; s < trace.num_steps(); ++s) {
        const auto q = trace.query(0, s, h);
        const DecodeResult res = decode_step(q, view, cfg);
        const double err = output_error(res.output, full_attention(q, view));
        const MinClusters need =
            min_clusters_for_error(q, view, std::max(err, 1e-12));
        const std::size_t exact = res.plan.exact_clusters.size();
        covered += exact >= need.count ? 1 : 0;
        ratios.push_back(static_cast<double>(exact) /
                         static_cast<double>(std::max<std::size_t>(need.count, 1)));
        ++steps;
      }
    }
  }
  const double share = static_cast<double>(covered) / static_cast<double>(steps);
  const double median = percentile(ratios, 0.5);
  report(share >= 0.95 && median <= 4.0, "min_cluster_tracking",
         fmt("N in {512..4096}, %.0f steps, exact >= minimum on %.3f, "
             "median ratio %.3g",
             static_cast<double>(steps), share, median));
}

void efficiency() {
  // Pooled over seeds: doublep at (0.95, 0.7) against the smallest fixed
  // cluster budget whose mean error is no worse.
  std::vector<ExperimentInput> inputs;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    WorkloadSpec spec;
    spec.context_len = 1024;
    spec.head_dim = 64;
    spec.tail_profile = TailProfile::kPeaked;
    spec.kv_heads = 2;
    spec.gqa_group = 2;
    spec.steps = 8;
    spec.seed = 8000 + seed;
    inputs.push_back(ExperimentInput::from_workload(spec));
  }
  auto pooled = [&](const RunConfig& base) {
    double err = 0.0;
    double tokens = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      RunConfig c = base;
      c.seed = i;
      for (const ExperimentRecord& r : run(c, inputs[i])) {
        err += r.output_rel_error;
        tokens += static_cast<double>(r.exact_tokens);
        ++count;
      }
    }
    return std::pair{err / count, tokens / count};
  };
  RunConfig d;
  d.apply_preset("llama-default");
  const auto [d_err, d_tokens] = pooled(d);
  const std::size_t clusters =
      ClusterCountPolicy{}.resolve(1024 - d.sink - d.window);
  double matched_tokens = 0.0;
  std::size_t matched_m = 0;
  for (std::size_t m = 1; m <= clusters; ++m) {
    RunConfig c;
    c.method = Method::kClusterTopK;
    c.m = m;
    const auto [c_err, c_tokens] = pooled(c);
    if (c_err <= d_err) {
      matched_tokens = c_tokens;
      matched_m = m;
      break;
    }
  }
  const bool ok = matched_m > 0 && d_tokens <= 0.5 * matched_tokens;
  report(ok, "efficiency",
         fmt("20 peaked seeds: doublep %.1f exact tokens at mean err %.4g; "
             "cluster_topk needs m=%.0f, %.1f tokens",
             d_tokens, d_err, static_cast<double>(matched_m), matched_tokens) +
             fmt(" (ratio %.3f, target <= 0.5)",
                 matched_tokens > 0 ? d_tokens / matched_tokens : INFINITY));
}

void determinism() {
  WorkloadSpec spec;
  spec.context_len = 1024;
  spec.head_dim = 32;
  spec.tail_profile = TailProfile::kMixed;
  spec.kv_heads = 2;
  spec.gqa_group = 2;
  spec.seed = 9000;
  bool ok = true;
  for (Method method : {Method::kFull, Method::kDoubleP, Method::kTokenTopK,
                        Method::kClusterTopK, Method::kTokenTopPFixed}) {
    RunConfig c;
    c.method = method;
    c.seed = 17;
    ExperimentInput a = ExperimentInput::from_workload(spec);
    ExperimentInput b = ExperimentInput::from_workload(spec);
    ok = ok && records_to_csv(run(c, a)) == records_to_csv(run(c, b));
  }
  report(ok, "determinism", "repeated runs of all five methods, byte compare");
}

}  // namespace
}  // namespace doublep

int main() {
  doublep::exactness_collapse();
  doublep::jensen_bound();
  doublep::top_p_oracle();
  doublep::stage1_guarantee();
  doublep::fixed_budget_failure();
  doublep::fixed_candidate_budget();
  doublep::min_cluster_tracking();
  doublep::efficiency();
  doublep::determinism();
  return doublep::g_failures == 0 ? 0 : 1;
}
