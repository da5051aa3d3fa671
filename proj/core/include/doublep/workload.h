// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

#include "doublep/kvcache.h"

namespace doublep {

// How decode queries relate to the key blobs:
//   peaked  - aligned with one blob centroid, attention concentrates
//   heavy   - aligned with the mean direction of several blobs
//   uniform - near-zero query, attention close to uniform
//   mixed   - cycles peaked/heavy/uniform across (layer, query head)
enum class TailProfile { kPeaked, kHeavy, kUniform, kMixed };

TailProfile parse_tail_profile(std::string_view name);
std::string_view to_string(TailProfile profile);

struct WorkloadSpec {
  std::uint32_t context_len = 1024;
  std::uint32_t head_dim = 64;
  std::uint32_t num_blobs = 8;
  double blob_spread = 1.0;       // per-coordinate key std-dev inside a blob
  double blob_separation = 10.0;  // norm of each blob center
  TailProfile tail_profile = TailProfile::kPeaked;
  std::uint64_t seed = 0;
  std::uint32_t layers = 1;
  std::uint32_t kv_heads = 1;
  std::uint32_t gqa_group = 1;
  std::uint32_t steps = 4;

  // Reserved exact region; only used to check the blob invariant.
  std::size_t sink = 4;
  std::size_t window = 64;

  // Blob b receives tokens with weight (b + 1)^-size_skew; 0 gives equal blobs.
  double size_skew = 0.0;
  // Peaked queries put the target blob's mean logit in this range.
  double peak_logit_min = 6.0;
  double peak_logit_max = 10.0;
  // Mean logit of each of the blobs a heavy query is aligned with.
  double heavy_logit = 2.0;
  std::uint32_t heavy_blobs = 4;
  // Std-dev of uniform-profile query logits; 0 gives an exactly zero query.
  double uniform_noise = 0.0;

  void validate() const;
};

// Profile actually used by a query head (resolves kMixed).
TailProfile profile_for(const WorkloadSpec& spec, std::uint32_t layer,
                        std::uint32_t query_head);

// Gaussian-blob keys, standard-normal values and per-profile queries.
// Deterministic in the spec.
std::pair<KvCache, QueryTrace> generate(const WorkloadSpec& spec);

}  // namespace doublep
