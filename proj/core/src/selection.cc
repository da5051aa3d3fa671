// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/selection.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doublep/error.h"

namespace doublep {
namespace {

void check_threshold(double p) {
  Require(p > 0.0 && p <= 1.0, "top-p threshold must lie in (0, 1]");
}

bool ranks_before(std::span<const double> scores, std::uint32_t a,
                  std::uint32_t b) {
  if (scores[a] != scores[b]) return scores[a] > scores[b];
  return a < b;
}

}  // namespace

std::vector<std::uint32_t> descending_order(std::span<const double> scores) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return ranks_before(scores, a, b);
  });
  return order;
}

TopPResult top_p_select(std::span<const double> probs, double p) {
  check_threshold(p);
  Require(!probs.empty(), "empty probabilities");
  double total = 0.0;
  for (double x : probs) {
    Require(std::isfinite(x), "non-finite probability");
    Require(x >= 0.0, "negative probability");
    total += x;
  }
  Require(total > 0.0, "probabilities sum to zero");

  TopPResult result;
  result.threshold = p;
  std::vector<std::uint32_t> order = descending_order(probs);
  std::vector<double> sorted(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = probs[order[i]];

  const std::size_t count =
      p == 1.0 ? order.size() : top_p_select_sorted(sorted, p, total);
  order.resize(count);
  result.selected = std::move(order);
  if (count == sorted.size()) {
    // Summing in another order than `total` could land a few ulps below 1.
    result.cumulative_mass = 1.0;
    return result;
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < count; ++i) mass += sorted[i];
  result.cumulative_mass = std::min(1.0, mass / total);
  return result;
}

std::size_t top_p_select_sorted(std::span<const double> sorted_probs, double p,
                                double total) {
  check_threshold(p);
  Require(!sorted_probs.empty(), "empty probabilities");
  if (p == 1.0) return sorted_probs.size();
  const double target = p * total;
  double running = 0.0;
  for (std::size_t i = 0; i < sorted_probs.size(); ++i) {
    if (i > 0 && sorted_probs[i] > sorted_probs[i - 1]) {
      Fail("input not sorted");
    }
    running += sorted_probs[i];
    if (running >= target) {
      // Peek one past the stop point so an ascent right after it is caught.
      if (i + 1 < sorted_probs.size() && sorted_probs[i + 1] > sorted_probs[i]) {
        Fail("input not sorted");
      }
      return i + 1;
    }
  }
  return sorted_probs.size();
}

std::vector<std::uint32_t> top_k_select(std::span<const double> scores,
                                        std::size_t k) {
  Require(k >= 1 && k <= scores.size(), "top-k budget out of range");
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::uint32_t a, std::uint32_t b) {
                      return ranks_before(scores, a, b);
                    });
  order.resize(k);
  return order;
}

}  // namespace doublep
