// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/engine.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "doublep/error.h"
#include "doublep/numerics.h"

namespace doublep {
namespace {

std::vector<double> token_logits(std::span<const float> q,
                                 const HeadView& head) {
  Require(q.size() == head.head_dim, "dimension mismatch");
  std::vector<double> logits(head.context_len);
  for (std::size_t t = 0; t < head.context_len; ++t) {
    logits[t] = dot_scaled(q, head.key(t), head.head_dim);
  }
  return logits;
}

void check_plan(const SelectionPlan& plan, const HeadView& head) {
  const std::size_t count = head.clusters.size();
  bool ok = plan.cluster_count == count;
  for (auto ids : {std::span<const std::uint32_t>(plan.exact_clusters),
                   std::span<const std::uint32_t>(plan.approx_clusters)}) {
    for (std::uint32_t id : ids) ok = ok && id < count;
  }
  Require(ok, "plan does not match clustering");
}

MixedBuffer tokens_only_buffer(const HeadView& head,
                               std::span<const std::uint32_t> tokens) {
  MixedBuffer buf;
  buf.head_dim = head.head_dim;
  buf.rows = tokens.size();
  buf.exact_rows = tokens.size();
  buf.keys.reserve(tokens.size() * head.head_dim);
  buf.values.reserve(tokens.size() * head.head_dim);
  buf.bias.assign(tokens.size(), 0.0);
  for (std::uint32_t t : tokens) {
    auto k = head.key(t);
    auto v = head.value(t);
    buf.keys.insert(buf.keys.end(), k.begin(), k.end());
    buf.values.insert(buf.values.end(), v.begin(), v.end());
  }
  return buf;
}

double mass_of(std::span<const double> weights,
               std::span<const std::uint32_t> tokens) {
  double mass = 0.0;
  for (std::uint32_t t : tokens) mass += weights[t];
  return mass;
}

}  // namespace

void DoublePConfig::validate() const {
  Require(p1 > 0.0 && p1 <= 1.0, "p1 must lie in (0, 1]");
  Require(p2 > 0.0 && p2 <= 1.0, "p2 must lie in (0, 1]");
}

double AttentionOutput::normalizer() const { return std::exp(log_normalizer); }

HeadView head_view(const KvCache& cache, const ClusteredCache& cc,
                   std::size_t layer, std::size_t kv_head) {
  Require(cc.matches(cache), "clustering was built for a different cache");
  HeadView view;
  view.keys = cache.keys(layer, kv_head);
  view.values = cache.values(layer, kv_head);
  view.head_dim = cache.head_dim();
  view.context_len = cache.context_len();
  view.clusters = cc.clusters(layer, kv_head);
  view.sink = cc.sink();
  view.window_begin = cc.middle_end();
  return view;
}

HeadView dense_view(const KvCache& cache, std::size_t layer,
                    std::size_t kv_head) {
  HeadView view;
  view.keys = cache.keys(layer, kv_head);
  view.values = cache.values(layer, kv_head);
  view.head_dim = cache.head_dim();
  view.context_len = cache.context_len();
  view.window_begin = cache.context_len();
  return view;
}

AttentionOutput full_attention(std::span<const float> q, const HeadView& head) {
  const std::vector<double> logits = token_logits(q, head);
  const double lse = log_sum_exp(logits);
  AttentionOutput out;
  out.o.assign(head.head_dim, 0.0);
  for (std::size_t t = 0; t < head.context_len; ++t) {
    const double w = std::exp(logits[t] - lse);
    out.weight_sum += w;
    auto v = head.value(t);
    for (std::size_t j = 0; j < head.head_dim; ++j) out.o[j] += w * v[j];
  }
  out.log_normalizer = lse;
  out.exact_token_count = head.context_len;
  return out;
}

AttentionOutput full_attention(std::span<const float> q, const KvCache& cache,
                               std::size_t layer, std::size_t kv_head) {
  return full_attention(q, dense_view(cache, layer, kv_head));
}

std::vector<double> attention_weights(std::span<const float> q,
                                      const HeadView& head) {
  return stable_softmax(token_logits(q, head));
}

ClusterEstimate estimate_cluster_distribution(std::span<const float> q,
                                              std::span<const Cluster> clusters,
                                              std::size_t head_dim) {
  Require(!clusters.empty(), "no clusters to estimate");
  Require(q.size() == head_dim, "dimension mismatch");
  ClusterEstimate est;
  est.log_mass.reserve(clusters.size());
  for (const Cluster& c : clusters) {
    est.log_mass.push_back(
        dot_scaled(q, std::span<const double>(c.centroid), head_dim) +
        std::log(static_cast<double>(c.size())));
  }
  est.distribution = stable_softmax(est.log_mass);
  est.order = descending_order(est.distribution);
  return est;
}

ClusterEstimate estimate_cluster_distribution(std::span<const float> q,
                                              const ClusteredCache& cc,
                                              std::size_t layer,
                                              std::size_t kv_head) {
  return estimate_cluster_distribution(q, cc.clusters(layer, kv_head),
                                       cc.head_dim());
}

SelectionPlan plan_selection(const ClusterEstimate& est,
                             const DoublePConfig& cfg) {
  cfg.validate();
  SelectionPlan plan;
  plan.cluster_count = est.distribution.size();
  plan.stage1 = top_p_select(est.distribution, cfg.p1);

  // Stage 2 runs on the stage-1 masses renormalized within the retained set.
  // They are already in descending order, so the selected positions form a
  // prefix of stage1.selected.
  std::vector<double> retained;
  retained.reserve(plan.stage1.selected.size());
  for (std::uint32_t id : plan.stage1.selected) {
    retained.push_back(est.distribution[id]);
  }
  const std::size_t exact = top_p_select(retained, cfg.p2).selected.size();
  plan.exact_clusters.assign(plan.stage1.selected.begin(),
                             plan.stage1.selected.begin() +
                                 static_cast<std::ptrdiff_t>(exact));
  plan.approx_clusters.assign(
      plan.stage1.selected.begin() + static_cast<std::ptrdiff_t>(exact),
      plan.stage1.selected.end());
  return plan;
}

SelectionPlan plan_selection(const ClusterEstimate& est,
                             const DoublePConfig& cfg, const HeadView& head) {
  SelectionPlan plan = plan_selection(est, cfg);
  plan.exact_tokens = resolve_exact_tokens(plan, head);
  return plan;
}

SelectionPlan prefix_plan(const ClusterEstimate& est, std::size_t exact_count,
                          const HeadView& head) {
  Require(exact_count <= est.order.size(), "exact prefix out of range");
  SelectionPlan plan;
  plan.cluster_count = est.order.size();
  plan.stage1.selected = est.order;
  plan.stage1.cumulative_mass = 1.0;
  plan.stage1.threshold = 1.0;
  plan.exact_clusters.assign(
      est.order.begin(),
      est.order.begin() + static_cast<std::ptrdiff_t>(exact_count));
  plan.approx_clusters.assign(
      est.order.begin() + static_cast<std::ptrdiff_t>(exact_count),
      est.order.end());
  plan.exact_tokens = resolve_exact_tokens(plan, head);
  return plan;
}

std::vector<std::uint32_t> resolve_exact_tokens(const SelectionPlan& plan,
                                                const HeadView& head) {
  check_plan(plan, head);
  std::vector<std::uint32_t> tokens;
  const std::size_t sink_end = std::min(head.sink, head.context_len);
  for (std::size_t t = 0; t < sink_end; ++t) {
    tokens.push_back(static_cast<std::uint32_t>(t));
  }
  for (std::uint32_t id : plan.exact_clusters) {
    const auto& members = head.clusters[id].members;
    tokens.insert(tokens.end(), members.begin(), members.end());
  }
  for (std::size_t t = std::max(head.window_begin, sink_end);
       t < head.context_len; ++t) {
    tokens.push_back(static_cast<std::uint32_t>(t));
  }
  std::sort(tokens.begin(), tokens.end());
  return tokens;
}

MixedBuffer gather_mixed(const SelectionPlan& plan, const HeadView& head) {
  check_plan(plan, head);
  const std::vector<std::uint32_t> tokens =
      plan.exact_tokens.empty() ? resolve_exact_tokens(plan, head)
                                : plan.exact_tokens;
  MixedBuffer buf = tokens_only_buffer(head, tokens);
  const std::size_t d = head.head_dim;
  buf.rows += plan.approx_clusters.size();
  buf.keys.reserve(buf.rows * d);
  buf.values.reserve(buf.rows * d);
  buf.bias.reserve(buf.rows);
  for (std::uint32_t id : plan.approx_clusters) {
    const Cluster& c = head.clusters[id];
    buf.keys.insert(buf.keys.end(), c.centroid.begin(), c.centroid.end());
    buf.values.insert(buf.values.end(), c.value_mean.begin(),
                      c.value_mean.end());
    buf.bias.push_back(std::log(static_cast<double>(c.size())));
  }
  return buf;
}

AttentionOutput weighted_attention(std::span<const float> q,
                                   const MixedBuffer& buffer) {
  const std::size_t d = buffer.head_dim;
  Require(q.size() == d, "dimension mismatch");
  Require(buffer.rows > 0, "nothing to attend to");

  std::vector<double> scores(buffer.rows);
  std::vector<double> acc(d, 0.0);
  double running_max = -std::numeric_limits<double>::infinity();
  double running_sum = 0.0;
  for (std::size_t r = 0; r < buffer.rows; ++r) {
    const std::span<const double> key(buffer.keys.data() + r * d, d);
    const double s = dot_scaled(q, key, d) + buffer.bias[r];
    scores[r] = s;
    if (s > running_max) {
      const double rescale = std::exp(running_max - s);
      running_sum *= rescale;
      for (double& a : acc) a *= rescale;
      running_max = s;
    }
    const double w = std::exp(s - running_max);
    running_sum += w;
    const double* v = buffer.values.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) acc[j] += w * v[j];
  }

  AttentionOutput out;
  out.o.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.o[j] = acc[j] / running_sum;
  out.log_normalizer = running_max + std::log(running_sum);
  for (double s : scores) out.weight_sum += std::exp(s - out.log_normalizer);
  out.exact_token_count = buffer.exact_rows;
  out.approx_cluster_count = buffer.rows - buffer.exact_rows;
  return out;
}

AttentionOutput sparse_attention(std::span<const float> q,
                                 const HeadView& head,
                                 const SelectionPlan& plan) {
  return weighted_attention(q, gather_mixed(plan, head));
}

AttentionOutput sparse_attention(std::span<const float> q,
                                 const KvCache& cache,
                                 const ClusteredCache& cc,
                                 const SelectionPlan& plan, std::size_t layer,
                                 std::size_t kv_head) {
  return sparse_attention(q, head_view(cache, cc, layer, kv_head), plan);
}

DecodeResult decode_step(std::span<const float> q, const HeadView& head,
                         const DoublePConfig& cfg) {
  DecodeResult result;
  result.estimate =
      estimate_cluster_distribution(q, head.clusters, head.head_dim);
  result.plan = plan_selection(result.estimate, cfg, head);
  result.output = sparse_attention(q, head, result.plan);
  return result;
}

DecodeResult decode_step(std::span<const float> q, const KvCache& cache,
                         const ClusteredCache& cc, const DoublePConfig& cfg,
                         std::size_t layer, std::size_t kv_head) {
  Require(cfg.sink == cc.sink() && cfg.window == cc.window(),
          "config sink/window differ from the clustering");
  return decode_step(q, head_view(cache, cc, layer, kv_head), cfg);
}

BaselineOutput baseline_token_topk(std::span<const float> q,
                                   const HeadView& head, std::size_t k) {
  Require(k >= 1 && k <= head.context_len, "token budget out of range");
  const std::vector<double> weights = attention_weights(q, head);
  BaselineOutput result;
  result.tokens = top_k_select(weights, k);
  result.true_mass = mass_of(weights, result.tokens);
  result.selection_mass = result.true_mass;
  result.output =
      weighted_attention(q, tokens_only_buffer(head, result.tokens));
  return result;
}

BaselineOutput baseline_token_topk(std::span<const float> q,
                                   const KvCache& cache, std::size_t layer,
                                   std::size_t kv_head, std::size_t k) {
  return baseline_token_topk(q, dense_view(cache, layer, kv_head), k);
}

BaselineOutput baseline_cluster_topk(std::span<const float> q,
                                     const HeadView& head, std::size_t m) {
  Require(m >= 1 && m <= head.clusters.size(), "cluster budget out of range");
  const ClusterEstimate est =
      estimate_cluster_distribution(q, head.clusters, head.head_dim);
  const SelectionPlan plan = prefix_plan(est, m, head);
  BaselineOutput result;
  result.output = sparse_attention(q, head, plan);
  result.true_mass = mass_of(attention_weights(q, head), plan.exact_tokens);
  for (std::uint32_t id : plan.exact_clusters) {
    result.selection_mass += est.distribution[id];
  }
  result.tokens = plan.exact_tokens;
  return result;
}

BaselineOutput baseline_cluster_topk(std::span<const float> q,
                                     const KvCache& cache,
                                     const ClusteredCache& cc,
                                     std::size_t layer, std::size_t kv_head,
                                     std::size_t m) {
  return baseline_cluster_topk(q, head_view(cache, cc, layer, kv_head), m);
}

BaselineOutput baseline_token_topp_fixed_budget(std::span<const float> q,
                                                const HeadView& head,
                                                std::size_t budget, double p) {
  Require(budget >= 1 && budget <= head.context_len,
          "candidate budget out of range");
  const std::vector<double> weights = attention_weights(q, head);
  const std::vector<std::uint32_t> candidates = top_k_select(weights, budget);
  std::vector<double> candidate_mass;
  candidate_mass.reserve(candidates.size());
  double candidate_total = 0.0;
  for (std::uint32_t t : candidates) {
    candidate_mass.push_back(weights[t]);
    candidate_total += weights[t];
  }
  double total = 0.0;
  for (double w : weights) total += w;
  // Scores are measured against the full normalizer, so the prefix stops at
  // p of the total mass or runs out of candidates first.
  const std::size_t kept = top_p_select_sorted(candidate_mass, p, total);

  BaselineOutput result;
  result.tokens.assign(candidates.begin(),
                       candidates.begin() + static_cast<std::ptrdiff_t>(kept));
  result.true_mass = mass_of(weights, result.tokens);
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < kept; ++i) kept_mass += candidate_mass[i];
  result.selection_mass = std::min(1.0, kept_mass / candidate_total);
  result.output =
      weighted_attention(q, tokens_only_buffer(head, result.tokens));
  return result;
}

BaselineOutput baseline_token_topp_fixed_budget(std::span<const float> q,
                                                const KvCache& cache,
                                                std::size_t layer,
                                                std::size_t kv_head,
                                                std::size_t budget, double p) {
  return baseline_token_topp_fixed_budget(q, dense_view(cache, layer, kv_head),
                                          budget, p);
}

GrowingHead::GrowingHead(const KvCache& cache, const ClusteredCache& cc,
                         std::size_t layer, std::size_t kv_head)
    : head_dim_(cache.head_dim()),
      sink_(cc.sink()),
      window_(cc.window()),
      window_begin_(cc.middle_end()) {
  const HeadView src = head_view(cache, cc, layer, kv_head);
  keys_.assign(src.keys.begin(), src.keys.end());
  values_.assign(src.values.begin(), src.values.end());
  clusters_.assign(src.clusters.begin(), src.clusters.end());
  prefill_clusters_ = clusters_.size();
}

void GrowingHead::append(std::span<const float> key,
                         std::span<const float> value) {
  Require(key.size() == head_dim_ && value.size() == head_dim_,
          "dimension mismatch");
  Require(all_finite(key) && all_finite(value), "non-finite token");
  keys_.insert(keys_.end(), key.begin(), key.end());
  values_.insert(values_.end(), value.begin(), value.end());
  while (context_len() - window_begin_ > window_) {
    const std::size_t t = window_begin_++;
    Cluster residual;
    residual.members = {static_cast<std::uint32_t>(t)};
    residual.centroid.assign(keys_.begin() + t * head_dim_,
                             keys_.begin() + (t + 1) * head_dim_);
    residual.value_sum.assign(values_.begin() + t * head_dim_,
                              values_.begin() + (t + 1) * head_dim_);
    residual.value_mean = residual.value_sum;
    clusters_.push_back(std::move(residual));
  }
}

HeadView GrowingHead::view() const {
  HeadView v;
  v.keys = keys_;
  v.values = values_;
  v.head_dim = head_dim_;
  v.context_len = context_len();
  v.clusters = clusters_;
  v.sink = sink_;
  v.window_begin = window_begin_;
  return v;
}

}  // namespace doublep
