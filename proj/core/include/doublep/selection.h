// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace doublep {

// Result of a nucleus (top-p) selection.
//
// Selection stops at the first prefix of the descending order whose mass is
// >= p (not > p). Ties in probability are broken by the lower original index,
// so the result is a deterministic function of the input.
struct TopPResult {
  std::vector<std::uint32_t> selected;  // descending probability order
  double cumulative_mass = 0.0;         // normalized mass of `selected`
  double threshold = 1.0;
};

// Smallest descending-order prefix of `probs` with normalized cumulative mass
// >= p. Inputs need not sum to one; they are divided by their total first.
// p == 1 always selects every index, zero-probability entries included.
TopPResult top_p_select(std::span<const double> probs, double p);

// Prefix length for already-sorted (non-increasing) scores. Scans at most
// count + 1 entries and compares the running sum against p * total, so the
// caller passes the total when the input is not normalized. Matches
// top_p_select on the same data.
std::size_t top_p_select_sorted(std::span<const double> sorted_probs, double p,
                                double total = 1.0);

// The k largest scores, largest first, lower index winning ties.
std::vector<std::uint32_t> top_k_select(std::span<const double> scores,
                                        std::size_t k);

// Indices of `scores` in descending order with the lower-index tie-break used
// by every selection routine.
std::vector<std::uint32_t> descending_order(std::span<const double> scores);

}  // namespace doublep
