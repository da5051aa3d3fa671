// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "doublep/error.h"

// Scalar/vector primitives shared by the rest of the library. Storage may be
// 32-bit but every accumulation below runs in 64-bit.

namespace doublep {

// Max-subtracted softmax. Rejects empty input and any non-finite logit,
// including -inf.
std::vector<double> stable_softmax(std::span<const double> logits);

// log(sum(exp(x))) with max subtraction. A single element is returned as is.
double log_sum_exp(std::span<const double> logits);

namespace detail {

template <typename T, typename U>
double dot_scaled_impl(std::span<const T> q, std::span<const U> k,
                       std::size_t head_dim) {
  Require(q.size() == head_dim && k.size() == head_dim && head_dim >= 1,
          "dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < head_dim; ++i) {
    acc += static_cast<double>(q[i]) * static_cast<double>(k[i]);
  }
  return acc / std::sqrt(static_cast<double>(head_dim));
}

}  // namespace detail

// (q . k) / sqrt(head_dim), accumulated in double.
inline double dot_scaled(std::span<const float> q, std::span<const float> k,
                         std::size_t head_dim) {
  return detail::dot_scaled_impl(q, k, head_dim);
}
inline double dot_scaled(std::span<const float> q, std::span<const double> k,
                         std::size_t head_dim) {
  return detail::dot_scaled_impl(q, k, head_dim);
}
inline double dot_scaled(std::span<const double> q, std::span<const double> k,
                         std::size_t head_dim) {
  return detail::dot_scaled_impl(q, k, head_dim);
}

bool all_finite(std::span<const float> xs);
bool all_finite(std::span<const double> xs);

}  // namespace doublep
