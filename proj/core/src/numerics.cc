// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/numerics.h"

#include <algorithm>

namespace doublep {
namespace {

double checked_max(std::span<const double> logits) {
  Require(!logits.empty(), "empty logits");
  double max_logit = logits[0];
  for (double x : logits) {
    Require(std::isfinite(x), "non-finite logit");
    max_logit = std::max(max_logit, x);
  }
  return max_logit;
}

}  // namespace

std::vector<double> stable_softmax(std::span<const double> logits) {
  const double max_logit = checked_max(logits);
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max_logit);
    total += probs[i];
  }
  // total >= 1 because the max element contributes exp(0).
  for (double& p : probs) p /= total;
  return probs;
}

double log_sum_exp(std::span<const double> logits) {
  const double max_logit = checked_max(logits);
  if (logits.size() == 1) return logits[0];
  double total = 0.0;
  for (double x : logits) total += std::exp(x - max_logit);
  return max_logit + std::log(total);
}

bool all_finite(std::span<const float> xs) {
  return std::all_of(xs.begin(), xs.end(),
                     [](float x) { return std::isfinite(x); });
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(),
                     [](double x) { return std::isfinite(x); });
}

}  // namespace doublep
