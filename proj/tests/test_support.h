// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used as test oracles. They are deliberately
// naive and share no code with the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "doublep/kvcache.h"

namespace doublep::testing {

inline KvCache random_cache(std::uint32_t layers, std::uint32_t heads,
                            std::uint32_t d, std::uint32_t n,
                            std::uint64_t seed, double key_scale = 1.0) {
  KvCache cache(layers, heads, d, n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::uint32_t l = 0; l < layers; ++l) {
    for (std::uint32_t h = 0; h < heads; ++h) {
      for (float& x : cache.mutable_keys(l, h)) {
        x = static_cast<float>(key_scale * normal(rng));
      }
      for (float& x : cache.mutable_values(l, h)) {
        x = static_cast<float>(normal(rng));
      }
    }
  }
  return cache;
}

inline std::vector<float> random_query(std::uint32_t d, std::uint64_t seed,
                                       double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> q(d);
  for (float& x : q) x = static_cast<float>(scale * normal(rng));
  return q;
}

// exp-logits relative to the max, in long double.
inline std::vector<long double> naive_scores(std::span<const float> q,
                                             std::span<const float> keys,
                                             std::size_t n, std::size_t d) {
  std::vector<long double> logits(n);
  for (std::size_t t = 0; t < n; ++t) {
    long double acc = 0.0L;
    for (std::size_t j = 0; j < d; ++j) {
      acc += static_cast<long double>(q[j]) * keys[t * d + j];
    }
    logits[t] = acc / std::sqrt(static_cast<long double>(d));
  }
  const long double peak = *std::max_element(logits.begin(), logits.end());
  for (auto& l : logits) l = std::exp(l - peak);
  return logits;
}

inline std::vector<double> naive_weights(std::span<const float> q,
                                         std::span<const float> keys,
                                         std::size_t n, std::size_t d) {
  const auto s = naive_scores(q, keys, n, d);
  long double total = 0.0L;
  for (auto x : s) total += x;
  std::vector<double> w(n);
  for (std::size_t t = 0; t < n; ++t) w[t] = static_cast<double>(s[t] / total);
  return w;
}

// Double loop over tokens and dimensions.
inline std::vector<double> naive_attention(std::span<const float> q,
                                           std::span<const float> keys,
                                           std::span<const float> values,
                                           std::size_t n, std::size_t d) {
  const auto w = naive_weights(q, keys, n, d);
  std::vector<double> o(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    long double acc = 0.0L;
    for (std::size_t t = 0; t < n; ++t) acc += w[t] * values[t * d + j];
    o[j] = static_cast<double>(acc);
  }
  return o;
}

inline double rel_l2(std::span<const double> a, std::span<const double> b) {
  long double diff = 0.0L;
  long double ref = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (static_cast<long double>(a[i]) - b[i]) * (a[i] - b[i]);
    ref += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(std::sqrt(diff) /
                             std::max(std::sqrt(ref), 1e-12L));
}

// Indices by descending value, lower index first on ties.
inline std::vector<std::uint32_t> sorted_indices(std::span<const double> x) {
  std::vector<std::uint32_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a,
                                               std::uint32_t b) {
    return x[a] > x[b];
  });
  return idx;
}

// Tries every prefix of the sorted order and returns the shortest one whose
// mass reaches p of the total. p == 1 keeps everything.
inline std::vector<std::uint32_t> prefix_oracle_top_p(std::span<const double> x,
                                                      double p) {
  const auto idx = sorted_indices(x);
  if (p >= 1.0) return idx;
  long double total = 0.0L;
  for (double v : x) total += v;
  for (std::size_t len = 1; len <= idx.size(); ++len) {
    long double mass = 0.0L;
    for (std::size_t i = 0; i < len; ++i) mass += x[idx[i]];
    if (mass >= static_cast<long double>(p) * total) {
      return {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(len)};
    }
  }
  return idx;
}

inline std::vector<double> random_distribution(std::size_t n,
                                               std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> x(n);
  double total = 0.0;
  for (double& v : x) {
    v = expo(rng);
    total += v;
  }
  for (double& v : x) v /= total;
  return x;
}

}  // namespace doublep::testing
