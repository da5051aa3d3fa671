// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/metrics.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doublep/error.h"
#include "doublep/workload.h"
#include "test_support.h"

namespace doublep {
namespace {

using testing::naive_weights;
using testing::random_cache;
using testing::random_query;

ExperimentRecord with_mass(double mass) {
  ExperimentRecord r;
  r.recovered_exact_mass = mass;
  return r;
}

struct BlobFixture {
  KvCache cache;
  QueryTrace trace;
  ClusteredCache cc;

  static BlobFixture make(std::uint32_t n, std::uint32_t d,
                          std::uint64_t seed) {
    WorkloadSpec spec;
    spec.context_len = n;
    spec.head_dim = d;
    spec.steps = 6;
    spec.seed = seed;
    spec.tail_profile = TailProfile::kMixed;
    spec.kv_heads = 3;
    auto [cache, trace] = generate(spec);
    ClusteredCache cc =
        build_clustered_cache(cache, ClusterCountPolicy{}, 4, 64, seed);
    return {std::move(cache), std::move(trace), std::move(cc)};
  }
};

TEST(RecoveredMass, FullAndHalf) {
  KvCache cache(1, 1, 1, 2);
  cache.mutable_keys(0, 0)[0] = 1.0F;
  cache.mutable_keys(0, 0)[1] = 1.0F;
  const std::vector<float> q{1.0F};
  SelectionPlan plan;
  plan.exact_tokens = {0, 1};
  EXPECT_NEAR(recovered_mass(plan, q, cache, 0, 0), 1.0, 1e-15);
  plan.exact_tokens = {0};
  EXPECT_NEAR(recovered_mass(plan, q, cache, 0, 0), 0.5, 1e-15);
}

TEST(RecoveredMass, MatchesNaiveSumAndIsMonotone) {
  std::mt19937_64 rng(61);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const KvCache cache = random_cache(1, 1, 8, 100, seed, 2.0);
    const auto q = random_query(8, seed + 50, 2.0);
    const auto w = naive_weights(q, cache.keys(0, 0), 100, 8);
    SelectionPlan plan;
    double previous = 0.0;
    std::vector<std::uint32_t> tokens(100);
    for (std::uint32_t t = 0; t < 100; ++t) tokens[t] = t;
    std::shuffle(tokens.begin(), tokens.end(), rng);
    long double expected = 0.0L;
    for (std::uint32_t t : tokens) {
      plan.exact_tokens.push_back(t);
      expected += w[t];
      const double got = recovered_mass(plan, q, cache, 0, 0);
      EXPECT_NEAR(got, static_cast<double>(expected), 1e-6);
      EXPECT_GE(got, previous);
      previous = got;
    }
  }
}

TEST(ViolationRate, SmallCases) {
  const std::vector<ExperimentRecord> full{with_mass(1.0), with_mass(1.0)};
  EXPECT_EQ(violation_rate(full, 0.95), 0.0);
  const std::vector<ExperimentRecord> half{with_mass(0.5), with_mass(0.99),
                                           with_mass(0.9), with_mass(1.0)};
  EXPECT_EQ(violation_rate(half, 0.95), 0.5);
  EXPECT_THROW(violation_rate(std::vector<ExperimentRecord>{}, 0.9), Error);
}

TEST(ViolationRate, NonDecreasingInP) {
  std::mt19937_64 rng(62);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ExperimentRecord> records;
  for (int i = 0; i < 500; ++i) records.push_back(with_mass(u(rng)));
  double previous = 0.0;
  for (double p = 0.0; p <= 1.0; p += 0.01) {
    const double rate = violation_rate(records, p);
    EXPECT_GE(rate, previous);
    previous = rate;
  }
}

TEST(ClusterApproxError, TwoTokenCluster) {
  // Keys 0 and 2 under q = 1 give logits {0, 2}; the centroid logit is 1.
  KvCache cache(1, 1, 1, 3);
  cache.mutable_keys(0, 0)[0] = 0.0F;
  cache.mutable_keys(0, 0)[1] = 2.0F;
  cache.mutable_keys(0, 0)[2] = 0.5F;
  const ClusteredCache cc = build_clustered_cache(
      cache, ClusterCountPolicy::explicit_count(1), 0, 1, 0);
  ASSERT_EQ(cc.clusters(0, 0).size(), 1u);
  const std::vector<float> q{1.0F};
  const auto errors = cluster_approx_error(q, cache, cc, 0, 0);
  const double z_total = 1.0 + std::exp(2.0) + std::exp(0.5);
  EXPECT_NEAR(errors[0],
              (1.0 + std::exp(2.0) - 2.0 * std::exp(1.0)) / z_total, 1e-12);
  EXPECT_NEAR(errors[0] * z_total, 8.3891 - 5.4366, 1e-4);
}

TEST(ClusterApproxError, SingletonsAreExact) {
  const KvCache cache = random_cache(1, 1, 8, 150, 63, 2.0);
  const ClusteredCache cc = build_clustered_cache(
      cache, ClusterCountPolicy::tokens_per_cluster(1), 4, 16, 0);
  const auto errors = cluster_approx_error(random_query(8, 1, 2.0), cache, cc,
                                           0, 0);
  for (double e : errors) EXPECT_LE(e, 1e-15);
}

TEST(ClusterApproxError, MatchesDirectMassesAndBoundsTotal) {
  const BlobFixture f = BlobFixture::make(900, 16, 64);
  for (std::uint32_t h = 0; h < 3; ++h) {
    const HeadView view = head_view(f.cache, f.cc, 0, h);
    for (std::uint32_t s = 0; s < f.trace.num_steps(); ++s) {
      const auto q = f.trace.query(0, s, h);
      const auto errors = cluster_approx_error(q, view);
      ASSERT_EQ(errors.size(), view.clusters.size());

      auto logit = [&](auto key) {
        long double acc = 0.0L;
        for (std::size_t j = 0; j < 16; ++j) {
          acc += q[j] * static_cast<long double>(key[j]);
        }
        return acc / 4.0L;
      };
      long double z_total = 0.0L;
      for (std::size_t t = 0; t < view.context_len; ++t) {
        z_total += std::exp(logit(view.key(t)));
      }
      std::vector<double> direct;
      long double signed_sum = 0.0L;
      for (const Cluster& c : view.clusters) {
        long double z = 0.0L;
        for (std::uint32_t t : c.members) z += std::exp(logit(view.key(t)));
        const long double z_hat = c.size() * std::exp(logit(c.centroid));
        EXPECT_LE(z_hat, z * (1.0L + 1e-6L));
        direct.push_back(static_cast<double>(std::fabs(z - z_hat) / z_total));
        signed_sum += z - z_hat;
      }
      std::sort(direct.begin(), direct.end());
      std::vector<double> sorted = errors;
      std::sort(sorted.begin(), sorted.end());
      double abs_sum = 0.0;
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        EXPECT_GE(errors[i], 0.0);
        EXPECT_NEAR(sorted[i], direct[i], 1e-9);
        abs_sum += errors[i];
      }
      EXPECT_LE(static_cast<double>(std::fabs(signed_sum) / z_total),
                abs_sum + 1e-9);
    }
  }
}

TEST(MinClusters, ZeroWhenPrefixZeroSuffices) {
  const BlobFixture f = BlobFixture::make(600, 16, 65);
  const HeadView view = head_view(f.cache, f.cc, 0, 0);
  const auto q = f.trace.query(0, 0, 0);
  const ClusterEstimate est =
      estimate_cluster_distribution(q, view.clusters, 16);
  const double err0 = output_error(
      sparse_attention(q, view, prefix_plan(est, 0, view)),
      full_attention(q, view));
  EXPECT_EQ(min_clusters_for_error(q, view, err0 + 1e-12).count, 0u);
  EXPECT_TRUE(min_clusters_for_error(q, view, err0 + 1e-12).attainable);
}

TEST(MinClusters, SingletonsNeedNone) {
  const KvCache cache = random_cache(1, 1, 8, 150, 66, 2.0);
  const ClusteredCache cc = build_clustered_cache(
      cache, ClusterCountPolicy::tokens_per_cluster(1), 4, 16, 0);
  EXPECT_EQ(
      min_clusters_for_error(random_query(8, 2, 2.0), cache, cc, 0, 0, 1e-9)
          .count,
      0u);
}

TEST(MinClusters, BruteForceAgreesAndIsMonotone) {
  const BlobFixture f = BlobFixture::make(700, 16, 67);
  for (std::uint32_t h = 0; h < 3; ++h) {
    const HeadView view = head_view(f.cache, f.cc, 0, h);
    const auto q = f.trace.query(0, 1, h);
    const ClusterEstimate est =
        estimate_cluster_distribution(q, view.clusters, 16);
    const AttentionOutput ref = full_attention(q, view);
    std::vector<double> prefix_errors;
    for (std::size_t m = 0; m <= est.order.size(); ++m) {
      prefix_errors.push_back(output_error(
          sparse_attention(q, view, prefix_plan(est, m, view)), ref));
    }
    std::size_t previous = est.order.size();
    for (double eps : {1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.3, 1.0}) {
      const MinClusters got = min_clusters_for_error(q, view, eps);
      std::size_t expected = est.order.size();
      bool attainable = false;
      for (std::size_t m = 0; m < prefix_errors.size(); ++m) {
        if (prefix_errors[m] <= eps) {
          expected = m;
          attainable = true;
          break;
        }
      }
      EXPECT_EQ(got.count, expected);
      EXPECT_EQ(got.attainable, attainable);
      EXPECT_LE(got.count, previous);
      previous = got.count;
    }
  }
  const HeadView view = head_view(f.cache, f.cc, 0, 0);
  EXPECT_THROW(min_clusters_for_error(f.trace.query(0, 0, 0), view, 0.0),
               Error);
}

TEST(OutputError, SmallCases) {
  AttentionOutput a;
  a.o = {0.6, 0.8};
  EXPECT_EQ(output_error(a, a), 0.0);
  AttentionOutput b;
  b.o = {1.2, 1.6};
  EXPECT_NEAR(output_error(a, b), 0.5, 1e-15);
  AttentionOutput c;
  c.o = {1.0};
  EXPECT_THROW(output_error(a, c), Error);
}

TEST(OutputError, MatchesWideNormReference) {
  std::mt19937_64 rng(68);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    AttentionOutput a;
    AttentionOutput b;
    for (int j = 0; j < 32; ++j) {
      a.o.push_back(normal(rng));
      b.o.push_back(normal(rng));
    }
    EXPECT_NEAR(output_error(a, b), testing::rel_l2(a.o, b.o), 1e-12);
    EXPECT_NEAR(output_error(b, a), testing::rel_l2(b.o, a.o), 1e-12);
  }
}

TEST(Percentile, NearestRank) {
  const std::vector<double> x{5.0, 1.0, 4.0, 2.0, 3.0};
  EXPECT_EQ(percentile(x, 0.0), 1.0);
  EXPECT_EQ(percentile(x, 0.5), 3.0);
  EXPECT_EQ(percentile(x, 0.9), 5.0);
  EXPECT_EQ(percentile(x, 1.0), 5.0);
  EXPECT_THROW(percentile({}, 0.5), Error);
}

}  // namespace
}  // namespace doublep
