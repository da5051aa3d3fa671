// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/workload.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doublep/clustering.h"
#include "doublep/error.h"

namespace doublep {
namespace {

std::vector<double> unit_vector(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> u(d);
  double norm = 0.0;
  do {
    for (double& x : u) x = normal(rng);
    norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
  } while (norm == 0.0);
  for (double& x : u) x /= norm;
  return u;
}

}  // namespace

TailProfile parse_tail_profile(std::string_view name) {
  if (name == "peaked") return TailProfile::kPeaked;
  if (name == "heavy") return TailProfile::kHeavy;
  if (name == "uniform") return TailProfile::kUniform;
  if (name == "mixed") return TailProfile::kMixed;
  Fail("unknown tail profile: " + std::string(name));
}

std::string_view to_string(TailProfile profile) {
  switch (profile) {
    case TailProfile::kPeaked: return "peaked";
    case TailProfile::kHeavy: return "heavy";
    case TailProfile::kUniform: return "uniform";
    case TailProfile::kMixed: return "mixed";
  }
  return "unknown";
}

void WorkloadSpec::validate() const {
  Require(context_len > 0 && head_dim > 0 && num_blobs > 0,
          "workload dimensions must be positive");
  Require(layers > 0 && kv_heads > 0 && gqa_group > 0,
          "workload head counts must be positive");
  Require(std::uint64_t{context_len} >= sink + window + num_blobs,
          "context too short for sink + window + one token per blob");
  Require(blob_spread >= 0.0 && blob_separation > 0.0,
          "blob spread must be >= 0 and separation > 0");
  Require(size_skew >= 0.0, "size skew must be >= 0");
  Require(peak_logit_min <= peak_logit_max, "empty peak logit range");
  Require(heavy_blobs >= 1, "heavy profile needs at least one blob");
  Require(uniform_noise >= 0.0, "uniform noise must be >= 0");
}

TailProfile profile_for(const WorkloadSpec& spec, std::uint32_t layer,
                        std::uint32_t query_head) {
  if (spec.tail_profile != TailProfile::kMixed) return spec.tail_profile;
  static constexpr TailProfile kCycle[] = {
      TailProfile::kPeaked, TailProfile::kHeavy, TailProfile::kUniform};
  const std::uint32_t heads = spec.kv_heads * spec.gqa_group;
  return kCycle[(layer * heads + query_head) % 3];
}

std::pair<KvCache, QueryTrace> generate(const WorkloadSpec& spec) {
  spec.validate();
  const std::size_t n = spec.context_len;
  const std::size_t d = spec.head_dim;
  const std::size_t blobs = spec.num_blobs;
  const std::uint32_t query_heads = spec.kv_heads * spec.gqa_group;

  KvCache cache(spec.layers, spec.kv_heads, spec.head_dim, spec.context_len);
  QueryTrace trace(spec.layers, query_heads, spec.gqa_group, spec.head_dim,
                   spec.steps);

  std::vector<double> blob_weights(blobs);
  for (std::size_t b = 0; b < blobs; ++b) {
    blob_weights[b] = std::pow(static_cast<double>(b + 1), -spec.size_skew);
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  // centers[layer][kv_head] -> blobs x d unit directions
  std::vector<std::vector<std::vector<double>>> directions(
      std::size_t{spec.layers} * spec.kv_heads);

  for (std::uint32_t layer = 0; layer < spec.layers; ++layer) {
    for (std::uint32_t head = 0; head < spec.kv_heads; ++head) {
      std::mt19937_64 rng(head_seed(spec.seed, layer, head));
      auto& dirs = directions[layer * spec.kv_heads + head];
      for (std::size_t b = 0; b < blobs; ++b) dirs.push_back(unit_vector(d, rng));

      std::discrete_distribution<std::size_t> pick_blob(blob_weights.begin(),
                                                        blob_weights.end());
      auto keys = cache.mutable_keys(layer, head);
      auto values = cache.mutable_values(layer, head);
      for (std::size_t t = 0; t < n; ++t) {
        std::size_t b = pick_blob(rng);
        // The first tokens after the sink seed every blob once.
        if (t >= spec.sink && t < spec.sink + blobs) b = t - spec.sink;
        for (std::size_t j = 0; j < d; ++j) {
          keys[t * d + j] = static_cast<float>(
              spec.blob_separation * dirs[b][j] +
              spec.blob_spread * normal(rng));
          values[t * d + j] = static_cast<float>(normal(rng));
        }
      }
    }
  }

  const double sqrt_d = std::sqrt(static_cast<double>(d));
  std::mt19937_64 qrng(head_seed(spec.seed, 0x51, 0x17));
  std::uniform_int_distribution<std::size_t> any_blob(0, blobs - 1);
  std::uniform_real_distribution<double> peak(spec.peak_logit_min,
                                              spec.peak_logit_max);
  for (std::uint32_t layer = 0; layer < spec.layers; ++layer) {
    for (std::uint32_t step = 0; step < spec.steps; ++step) {
      for (std::uint32_t h = 0; h < query_heads; ++h) {
        const auto& dirs =
            directions[layer * spec.kv_heads + trace.kv_head_for(h)];
        std::vector<double> q(d, 0.0);
        switch (profile_for(spec, layer, h)) {
          case TailProfile::kPeaked: {
            // q . center / sqrt(d) == target logit
            const std::size_t b = any_blob(qrng);
            const double scale = peak(qrng) * sqrt_d / spec.blob_separation;
            for (std::size_t j = 0; j < d; ++j) q[j] = scale * dirs[b][j];
            break;
          }
          case TailProfile::kHeavy: {
            std::vector<std::size_t> ids(blobs);
            std::iota(ids.begin(), ids.end(), 0);
            std::shuffle(ids.begin(), ids.end(), qrng);
            const std::size_t count = std::min<std::size_t>(spec.heavy_blobs,
                                                            blobs);
            const double scale =
                spec.heavy_logit * sqrt_d / spec.blob_separation;
            for (std::size_t i = 0; i < count; ++i) {
              for (std::size_t j = 0; j < d; ++j) {
                q[j] += scale * dirs[ids[i]][j];
              }
            }
            break;
          }
          case TailProfile::kUniform: {
            if (spec.uniform_noise > 0.0) {
              const double scale = spec.uniform_noise * sqrt_d /
                                   spec.blob_separation;
              for (double& x : q) x = scale * normal(qrng);
            }
            break;
          }
          case TailProfile::kMixed:
            break;  // resolved by profile_for
        }
        auto out = trace.mutable_query(layer, step, h);
        for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(q[j]);
      }
    }
  }
  return {std::move(cache), std::move(trace)};
}

}  // namespace doublep
