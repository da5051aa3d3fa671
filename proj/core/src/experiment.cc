// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/experiment.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <system_error>

#include "doublep/error.h"
#include "json.hpp"

namespace doublep {
namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
std::string opt_field(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) {
    return format_number(*v);
  } else {
    return std::to_string(*v);
  }
}

template <typename T>
ordered_json opt_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  return *v;
}

struct Step {
  std::uint32_t layer;
  std::uint32_t head;
  std::uint32_t step;
};

// Visits (layer, query head, step) in record order.
template <typename Fn>
void for_each_step(const QueryTrace& trace, Fn&& fn) {
  for (std::uint32_t layer = 0; layer < trace.num_layers(); ++layer) {
    for (std::uint32_t h = 0; h < trace.num_query_heads(); ++h) {
      for (std::uint32_t step = 0; step < trace.num_steps(); ++step) {
        fn(Step{layer, h, step});
      }
    }
  }
}

std::size_t default_budget(std::size_t context_len) {
  return std::max<std::size_t>(1, context_len / 4);
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

Method parse_method(std::string_view name) {
  if (name == "full") return Method::kFull;
  if (name == "doublep") return Method::kDoubleP;
  if (name == "token_topk") return Method::kTokenTopK;
  if (name == "cluster_topk") return Method::kClusterTopK;
  if (name == "token_topp_fixed") return Method::kTokenTopPFixed;
  Fail("unknown method: " + std::string(name));
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kFull: return "full";
    case Method::kDoubleP: return "doublep";
    case Method::kTokenTopK: return "token_topk";
    case Method::kClusterTopK: return "cluster_topk";
    case Method::kTokenTopPFixed: return "token_topp_fixed";
  }
  return "unknown";
}

OutputFormat parse_format(std::string_view name) {
  if (name == "csv") return OutputFormat::kCsv;
  if (name == "json") return OutputFormat::kJson;
  Fail("unknown format: " + std::string(name));
}

void RunConfig::apply_preset(std::string_view preset) {
  DoublePConfig cfg;
  if (preset == "llama-default") {
    cfg = DoublePConfig::llama_default();
  } else if (preset == "qwen-default") {
    cfg = DoublePConfig::qwen_default();
  } else {
    Fail("unknown preset: " + std::string(preset));
  }
  p1 = cfg.p1;
  p2 = cfg.p2;
}

ExperimentInput::ExperimentInput(KvCache cache, QueryTrace trace)
    : cache_(std::move(cache)), trace_(std::move(trace)) {
  cache_.validate();
  trace_.validate(cache_);
}

ExperimentInput ExperimentInput::from_dump(const std::filesystem::path& path) {
  auto [cache, trace] = read_dump(path);
  return ExperimentInput(std::move(cache), std::move(trace));
}

ExperimentInput ExperimentInput::from_workload(const WorkloadSpec& spec) {
  auto [cache, trace] = generate(spec);
  return ExperimentInput(std::move(cache), std::move(trace));
}

const ClusteredCache& ExperimentInput::clustering(
    const ClusterCountPolicy& policy, std::size_t sink, std::size_t window,
    std::uint64_t seed) {
  const Key key{static_cast<int>(policy.kind), policy.value, sink, window,
                seed};
  auto it = clusterings_.find(key);
  if (it == clusterings_.end()) {
    auto cc = std::make_unique<ClusteredCache>(
        build_clustered_cache(cache_, policy, sink, window, seed));
    it = clusterings_.emplace(key, std::move(cc)).first;
  }
  return *it->second;
}

std::vector<ExperimentRecord> run(const RunConfig& config,
                                  ExperimentInput& input) {
  const KvCache& cache = input.cache();
  const QueryTrace& trace = input.trace();
  const std::size_t n = cache.context_len();

  DoublePConfig dcfg;
  dcfg.p1 = config.p1;
  dcfg.p2 = config.p2;
  dcfg.sink = config.sink;
  dcfg.window = config.window;
  dcfg.cluster_policy = config.cluster_policy;

  const bool clustered = config.method == Method::kDoubleP ||
                         config.method == Method::kClusterTopK;
  const ClusteredCache* cc = nullptr;
  if (clustered) {
    dcfg.validate();
    cc = &input.clustering(config.cluster_policy, config.sink, config.window,
                           config.seed);
  }
  const std::size_t budget = config.budget.value_or(default_budget(n));

  std::vector<ExperimentRecord> records;
  records.reserve(std::size_t{trace.num_layers()} * trace.num_query_heads() *
                  trace.num_steps());
  for_each_step(trace, [&](const Step& s) {
    const auto q = trace.query(s.layer, s.step, s.head);
    const std::uint32_t kv = trace.kv_head_for(s.head);
    const HeadView dense = dense_view(cache, s.layer, kv);
    const AttentionOutput reference = full_attention(q, dense);

    ExperimentRecord r;
    r.layer = s.layer;
    r.head = s.head;
    r.step = s.step;
    r.method = std::string(to_string(config.method));
    AttentionOutput out;
    switch (config.method) {
      case Method::kFull: {
        out = reference;
        r.exact_tokens = n;
        r.estimated_mass = 1.0;
        r.recovered_exact_mass = 1.0;
        r.violation = false;
        break;
      }
      case Method::kDoubleP: {
        r.p1 = config.p1;
        r.p2 = config.p2;
        const HeadView view = head_view(cache, *cc, s.layer, kv);
        DecodeResult res = decode_step(q, view, dcfg);
        out = std::move(res.output);
        r.clusters_total = res.plan.cluster_count;
        r.clusters_selected = res.plan.stage1.selected.size();
        r.clusters_exact = res.plan.exact_clusters.size();
        r.exact_tokens = res.plan.exact_tokens.size();
        r.estimated_mass = res.plan.stage1.cumulative_mass;
        r.recovered_exact_mass = recovered_mass(res.plan, q, view);
        // The selection targets estimated mass, so that is what it can miss.
        r.violation = r.estimated_mass < config.p1;
        break;
      }
      case Method::kTokenTopK: {
        r.k = config.k;
        BaselineOutput b = baseline_token_topk(q, dense, config.k);
        out = std::move(b.output);
        r.exact_tokens = b.tokens.size();
        r.estimated_mass = b.selection_mass;
        r.recovered_exact_mass = b.true_mass;
        r.violation = b.true_mass < config.p;
        break;
      }
      case Method::kClusterTopK: {
        r.m = config.m;
        const HeadView view = head_view(cache, *cc, s.layer, kv);
        BaselineOutput b = baseline_cluster_topk(q, view, config.m);
        out = std::move(b.output);
        r.clusters_total = view.clusters.size();
        r.clusters_selected = view.clusters.size();
        r.clusters_exact = config.m;
        r.exact_tokens = b.tokens.size();
        r.estimated_mass = b.selection_mass;
        r.recovered_exact_mass = b.true_mass;
        r.violation = b.true_mass < config.p;
        break;
      }
      case Method::kTokenTopPFixed: {
        r.budget = budget;
        BaselineOutput b =
            baseline_token_topp_fixed_budget(q, dense, budget, config.p);
        out = std::move(b.output);
        r.exact_tokens = b.tokens.size();
        r.estimated_mass = b.selection_mass;
        r.recovered_exact_mass = b.true_mass;
        r.violation = b.true_mass < config.p;
        break;
      }
    }
    r.recovered_exact_mass = std::clamp(r.recovered_exact_mass, 0.0, 1.0);
    r.output_rel_error = output_error(out, reference);
    records.push_back(std::move(r));
  });
  return records;
}

SweepRow aggregate(const RunConfig& config,
                   std::span<const ExperimentRecord> records,
                   std::size_t context_len) {
  Require(!records.empty(), "no records to aggregate");
  SweepRow row;
  row.config = config;
  row.records = records.size();
  std::vector<double> errors;
  errors.reserve(records.size());
  std::size_t violations = 0;
  for (const ExperimentRecord& r : records) {
    errors.push_back(r.output_rel_error);
    row.mean_exact_tokens += static_cast<double>(r.exact_tokens);
    row.mean_est_mass += r.estimated_mass;
    row.mean_recovered_mass += r.recovered_exact_mass;
    violations += r.violation ? 1 : 0;
  }
  const double count = static_cast<double>(records.size());
  row.mean_rel_err =
      std::accumulate(errors.begin(), errors.end(), 0.0) / count;
  row.p50_rel_err = percentile(errors, 0.5);
  row.p90_rel_err = percentile(errors, 0.9);
  row.p99_rel_err = percentile(errors, 0.99);
  row.max_rel_err = *std::max_element(errors.begin(), errors.end());
  row.mean_exact_tokens /= count;
  row.mean_budget_ratio =
      row.mean_exact_tokens / static_cast<double>(context_len);
  row.violation_rate = static_cast<double>(violations) / count;
  row.mean_est_mass /= count;
  row.mean_recovered_mass /= count;
  return row;
}

std::vector<SweepRow> sweep(std::span<const RunConfig> configs,
                            ExperimentInput& input) {
  Require(!configs.empty(), "empty sweep");
  std::vector<SweepRow> rows;
  rows.reserve(configs.size());
  for (const RunConfig& config : configs) {
    const auto records = run(config, input);
    rows.push_back(aggregate(config, records, input.cache().context_len()));
  }
  return rows;
}

namespace {

constexpr const char* kRecordColumns[] = {
    "layer",          "head",           "step",
    "method",         "p1",             "p2",
    "k",              "m",              "B",
    "clusters_total", "clusters_selected", "clusters_exact",
    "exact_tokens",   "est_mass",       "recovered_mass",
    "violation",      "rel_err"};

std::vector<std::string> record_fields(const ExperimentRecord& r) {
  return {std::to_string(r.layer),
          std::to_string(r.head),
          std::to_string(r.step),
          r.method,
          opt_field(r.p1),
          opt_field(r.p2),
          opt_field(r.k),
          opt_field(r.m),
          opt_field(r.budget),
          std::to_string(r.clusters_total),
          std::to_string(r.clusters_selected),
          std::to_string(r.clusters_exact),
          std::to_string(r.exact_tokens),
          format_number(r.estimated_mass),
          format_number(r.recovered_exact_mass),
          r.violation ? "1" : "0",
          format_number(r.output_rel_error)};
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  line += '\n';
  return line;
}

ordered_json config_json(const RunConfig& c) {
  ordered_json j;
  j["method"] = std::string(to_string(c.method));
  j["p1"] = c.p1;
  j["p2"] = c.p2;
  j["k"] = c.k;
  j["m"] = c.m;
  j["B"] = opt_json(c.budget);
  j["p"] = c.p;
  j["cluster_policy"] =
      c.cluster_policy.kind == ClusterCountPolicy::Kind::kExplicit
          ? "clusters"
          : "tokens_per_cluster";
  j["cluster_policy_value"] = c.cluster_policy.value;
  j["sink"] = c.sink;
  j["window"] = c.window;
  j["seed"] = c.seed;
  return j;
}

constexpr const char* kSweepColumns[] = {
    "method",          "p1",           "p2",
    "k",               "m",            "B",
    "p",               "cluster_policy", "cluster_policy_value",
    "sink",            "window",       "seed",
    "records",         "mean_rel_err", "p50_rel_err",
    "p90_rel_err",     "p99_rel_err",  "max_rel_err",
    "mean_exact_tokens", "mean_budget_ratio", "violation_rate",
    "mean_est_mass",   "mean_recovered_mass"};

}  // namespace

std::string records_to_csv(std::span<const ExperimentRecord> records) {
  std::string out =
      join_csv({std::begin(kRecordColumns), std::end(kRecordColumns)});
  for (const ExperimentRecord& r : records) out += join_csv(record_fields(r));
  return out;
}

std::string records_to_json(std::span<const ExperimentRecord> records) {
  ordered_json arr = ordered_json::array();
  for (const ExperimentRecord& r : records) {
    ordered_json j;
    j["layer"] = r.layer;
    j["head"] = r.head;
    j["step"] = r.step;
    j["method"] = r.method;
    j["p1"] = opt_json(r.p1);
    j["p2"] = opt_json(r.p2);
    j["k"] = opt_json(r.k);
    j["m"] = opt_json(r.m);
    j["B"] = opt_json(r.budget);
    j["clusters_total"] = r.clusters_total;
    j["clusters_selected"] = r.clusters_selected;
    j["clusters_exact"] = r.clusters_exact;
    j["exact_tokens"] = r.exact_tokens;
    j["est_mass"] = r.estimated_mass;
    j["recovered_mass"] = r.recovered_exact_mass;
    j["violation"] = r.violation;
    j["rel_err"] = r.output_rel_error;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::string out =
      join_csv({std::begin(kSweepColumns), std::end(kSweepColumns)});
  for (const SweepRow& row : rows) {
    const RunConfig& c = row.config;
    out += join_csv({
        std::string(to_string(c.method)),
        format_number(c.p1),
        format_number(c.p2),
        std::to_string(c.k),
        std::to_string(c.m),
        opt_field(c.budget),
        format_number(c.p),
        c.cluster_policy.kind == ClusterCountPolicy::Kind::kExplicit
            ? "clusters"
            : "tokens_per_cluster",
        std::to_string(c.cluster_policy.value),
        std::to_string(c.sink),
        std::to_string(c.window),
        std::to_string(c.seed),
        std::to_string(row.records),
        format_number(row.mean_rel_err),
        format_number(row.p50_rel_err),
        format_number(row.p90_rel_err),
        format_number(row.p99_rel_err),
        format_number(row.max_rel_err),
        format_number(row.mean_exact_tokens),
        format_number(row.mean_budget_ratio),
        format_number(row.violation_rate),
        format_number(row.mean_est_mass),
        format_number(row.mean_recovered_mass),
    });
  }
  return out;
}

std::string sweep_to_json(std::span<const SweepRow> rows) {
  ordered_json arr = ordered_json::array();
  for (const SweepRow& row : rows) {
    ordered_json j = config_json(row.config);
    j["records"] = row.records;
    j["mean_rel_err"] = row.mean_rel_err;
    j["p50_rel_err"] = row.p50_rel_err;
    j["p90_rel_err"] = row.p90_rel_err;
    j["p99_rel_err"] = row.p99_rel_err;
    j["max_rel_err"] = row.max_rel_err;
    j["mean_exact_tokens"] = row.mean_exact_tokens;
    j["mean_budget_ratio"] = row.mean_budget_ratio;
    j["violation_rate"] = row.violation_rate;
    j["mean_est_mass"] = row.mean_est_mass;
    j["mean_recovered_mass"] = row.mean_recovered_mass;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string cluster_stats_json(const KvCache& cache, const ClusteredCache& cc,
                               const ClusterCountPolicy& policy,
                               std::uint64_t seed) {
  Require(cc.matches(cache), "clustering was built for a different cache");
  ordered_json doc;
  doc["context_len"] = cc.context_len();
  doc["head_dim"] = cc.head_dim();
  doc["sink"] = cc.sink();
  doc["window"] = cc.window();
  doc["middle_tokens"] = cc.middle_end() - cc.middle_begin();
  doc["requested_clusters"] =
      policy.resolve(cc.middle_end() - cc.middle_begin());
  doc["seed"] = seed;
  ordered_json heads = ordered_json::array();
  for (std::uint32_t layer = 0; layer < cc.num_layers(); ++layer) {
    for (std::uint32_t head = 0; head < cc.num_kv_heads(); ++head) {
      const auto clusters = cc.clusters(layer, head);
      std::vector<double> sizes;
      double inertia = 0.0;
      for (const Cluster& c : clusters) {
        sizes.push_back(static_cast<double>(c.size()));
        for (std::uint32_t t : c.members) {
          const auto k = cache.key(layer, head, t);
          for (std::size_t j = 0; j < k.size(); ++j) {
            const double diff = static_cast<double>(k[j]) - c.centroid[j];
            inertia += diff * diff;
          }
        }
      }
      ordered_json h;
      h["layer"] = layer;
      h["kv_head"] = head;
      h["clusters"] = clusters.size();
      h["size_min"] = *std::min_element(sizes.begin(), sizes.end());
      h["size_mean"] = std::accumulate(sizes.begin(), sizes.end(), 0.0) /
                       static_cast<double>(sizes.size());
      h["size_p50"] = percentile(sizes, 0.5);
      h["size_max"] = *std::max_element(sizes.begin(), sizes.end());
      h["inertia"] = inertia;
      heads.push_back(std::move(h));
    }
  }
  doc["heads"] = std::move(heads);
  return doc.dump(2) + "\n";
}

std::string Table::to_csv() const {
  std::string out = join_csv(columns);
  for (const auto& row : rows) out += join_csv(row);
  return out;
}

std::string Table::to_json() const {
  ordered_json arr = ordered_json::array();
  for (const auto& row : rows) {
    ordered_json j;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const std::string& cell = row[i];
      double number = 0.0;
      const auto res =
          std::from_chars(cell.data(), cell.data() + cell.size(), number);
      if (res.ec == std::errc() && res.ptr == cell.data() + cell.size()) {
        j[columns[i]] = number;
      } else {
        j[columns[i]] = cell;
      }
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

Table figure_budget_violations(ExperimentInput& input,
                               const FigureOptions& opts) {
  const KvCache& cache = input.cache();
  const QueryTrace& trace = input.trace();
  const std::size_t n = cache.context_len();

  std::vector<std::size_t> budgets;
  for (std::size_t k : opts.token_budgets) {
    if (k >= 1 && k <= n) budgets.push_back(k);
  }
  std::vector<std::size_t> fixed_violations(budgets.size(), 0);
  std::vector<double> fixed_mass(budgets.size(), 0.0);
  std::vector<double> adaptive_budgets;
  double adaptive_mass = 0.0;
  std::size_t adaptive_violations = 0;
  std::size_t steps = 0;

  for_each_step(trace, [&](const Step& s) {
    const auto q = trace.query(s.layer, s.step, s.head);
    const HeadView dense = dense_view(cache, s.layer, trace.kv_head_for(s.head));
    const std::vector<double> weights = attention_weights(q, dense);
    const std::size_t adaptive = top_p_select(weights, opts.target).selected.size();
    const BaselineOutput a = baseline_token_topk(q, dense, adaptive);
    adaptive_budgets.push_back(static_cast<double>(adaptive));
    adaptive_mass += a.true_mass;
    adaptive_violations += a.true_mass < opts.target ? 1 : 0;
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      const BaselineOutput b = baseline_token_topk(q, dense, budgets[i]);
      fixed_mass[i] += b.true_mass;
      fixed_violations[i] += b.true_mass < opts.target ? 1 : 0;
    }
    ++steps;
  });
  Require(steps > 0, "trace has no decode steps");

  const double count = static_cast<double>(steps);
  Table table;
  table.columns = {"series",        "budget",     "violation_rate",
                   "mean_recovered_mass", "budget_min", "budget_p50",
                   "budget_max"};
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    const std::string b = std::to_string(budgets[i]);
    table.rows.push_back({"fixed", b,
                          format_number(fixed_violations[i] / count),
                          format_number(fixed_mass[i] / count), b, b, b});
  }
  const double mean_budget =
      std::accumulate(adaptive_budgets.begin(), adaptive_budgets.end(), 0.0) /
      count;
  table.rows.push_back(
      {"adaptive", format_number(mean_budget),
       format_number(adaptive_violations / count),
       format_number(adaptive_mass / count),
       format_number(*std::min_element(adaptive_budgets.begin(),
                                       adaptive_budgets.end())),
       format_number(percentile(adaptive_budgets, 0.5)),
       format_number(*std::max_element(adaptive_budgets.begin(),
                                       adaptive_budgets.end()))});
  return table;
}

Table figure_recovered_mass(ExperimentInput& input,
                            const FigureOptions& opts) {
  const KvCache& cache = input.cache();
  const QueryTrace& trace = input.trace();
  const std::size_t n = cache.context_len();
  const std::size_t budget = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(opts.budget_ratio * n)), 1, n);

  Table table;
  table.columns = {"layer",          "head",           "step",
                   "budget",         "budget_ratio",   "recovered_mass",
                   "adaptive_budget_ratio", "fail"};
  for_each_step(trace, [&](const Step& s) {
    const auto q = trace.query(s.layer, s.step, s.head);
    const HeadView dense = dense_view(cache, s.layer, trace.kv_head_for(s.head));
    const BaselineOutput b =
        baseline_token_topp_fixed_budget(q, dense, budget, opts.target);
    const std::size_t adaptive =
        top_p_select(attention_weights(q, dense), opts.target).selected.size();
    table.rows.push_back(
        {std::to_string(s.layer), std::to_string(s.head),
         std::to_string(s.step), std::to_string(budget),
         format_number(static_cast<double>(budget) / n),
         format_number(b.true_mass),
         format_number(static_cast<double>(adaptive) / n),
         b.true_mass < opts.target ? "1" : "0"});
  });
  return table;
}

Table figure_cluster_error(ExperimentInput& input, const FigureOptions& opts) {
  const DoublePConfig& d = opts.doublep;
  const ClusteredCache& cc =
      input.clustering(d.cluster_policy, d.sink, d.window, opts.seed);
  const QueryTrace& trace = input.trace();
  Table table;
  table.columns = {"layer", "head", "step", "rank", "error", "metric"};
  for_each_step(trace, [&](const Step& s) {
    const auto q = trace.query(s.layer, s.step, s.head);
    const HeadView view =
        head_view(input.cache(), cc, s.layer, trace.kv_head_for(s.head));
    const std::vector<double> errors = cluster_approx_error(q, view);
    const std::size_t ranks = std::min(errors.size(), opts.max_rank);
    for (std::size_t r = 0; r < ranks; ++r) {
      table.rows.push_back({std::to_string(s.layer), std::to_string(s.head),
                            std::to_string(s.step), std::to_string(r),
                            format_number(errors[r]),
                            "abs_mass_error_over_total"});
    }
  });
  return table;
}

Table figure_min_clusters(ExperimentInput& input, const FigureOptions& opts) {
  const DoublePConfig& d = opts.doublep;
  const ClusteredCache& cc =
      input.clustering(d.cluster_policy, d.sink, d.window, opts.seed);
  const QueryTrace& trace = input.trace();
  Table table;
  table.columns = {"layer",        "head",          "step",
                   "epsilon",      "min_clusters",  "attainable",
                   "doublep_exact_clusters", "doublep_rel_err",
                   "clusters_total", "metric"};
  for_each_step(trace, [&](const Step& s) {
    const auto q = trace.query(s.layer, s.step, s.head);
    const HeadView view =
        head_view(input.cache(), cc, s.layer, trace.kv_head_for(s.head));
    const MinClusters need = min_clusters_for_error(q, view, opts.epsilon);
    const DecodeResult res = decode_step(q, view, d);
    const double err = output_error(res.output, full_attention(q, view));
    table.rows.push_back(
        {std::to_string(s.layer), std::to_string(s.head),
         std::to_string(s.step), format_number(opts.epsilon),
         std::to_string(need.count), need.attainable ? "1" : "0",
         std::to_string(res.plan.exact_clusters.size()), format_number(err),
         std::to_string(view.clusters.size()), "output_rel_l2"});
  });
  return table;
}

void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents) {
  std::filesystem::path staging = path;
  staging += ".partial";
  {
    std::ofstream out(staging, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrorKind::kIo, "cannot open for writing: " + path.string());
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.close();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(staging, ignored);
      throw Error(ErrorKind::kIo, "write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(staging, path, ec);
  if (ec) {
    std::filesystem::remove(staging, ec);
    throw Error(ErrorKind::kIo, "cannot write: " + path.string());
  }
}

}  // namespace doublep
