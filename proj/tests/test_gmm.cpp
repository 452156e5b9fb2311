// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "idamoe/gmm.hpp"

using namespace idamoe;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

GmmParams random_gmm(Rng& rng, std::size_t n, std::size_t m, std::size_t r) {
  GmmParams p(n, m, r);
  for (double& x : p.mix_logits) x = rng.normal();
  for (double& x : p.means) x = rng.normal();
  for (double& x : p.log_vars) x = rng.uniform(-1.0, 1.0);
  return p;
}

Mat random_batch(Rng& rng, std::size_t t, std::size_t r, double scale = 1.5) {
  Mat z(t, r);
  for (std::size_t i = 0; i < z.size(); ++i) z.flat()[i] = scale * rng.normal();
  return z;
}

SlowSet random_slow(Rng& rng, std::size_t total) {
  SlowSet s = SlowSet::none(total);
  while (s.empty()) {
    for (std::size_t k = 0; k < total; ++k) s.flags[k] = rng.uniform() < 0.5;
  }
  return s;
}

// Direct evaluation without log-space stabilization.
double naive_nll(const GmmParams& p, const Mat& z) {
  const auto pi = p.mixing();
  double total = 0.0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.total_components(); ++k) {
      double q = 0.0, logdet = 0.0;
      for (std::size_t d = 0; d < p.dim; ++d) {
        const double var = std::exp(p.log_var(k)[d]);
        const double diff = z(t, d) - p.mean(k)[d];
        q += diff * diff / var;
        logdet += p.log_var(k)[d];
      }
      s += pi[k] * std::exp(-0.5 * q) / std::sqrt(std::pow(2.0 * std::numbers::pi, p.dim)) /
           std::exp(0.5 * logdet);
    }
    total -= std::log(s);
  }
  return total;
}

}  // namespace

TEST(ComponentLogDensity, Examples) {
  GmmParams p(1, 1, 1);
  EXPECT_NEAR(component_log_density(p, 0, 0, std::vector<double>{0.0}), -0.918939, 1e-6);

  GmmParams q(1, 1, 2);
  EXPECT_NEAR(component_log_density(q, 0, 0, std::vector<double>{1.0, 1.0}), -kLog2Pi - 1.0,
              1e-12);
  EXPECT_THROW(component_log_density(q, 0, 0, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(ComponentLogDensity, MaximizedAtMean) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    GmmParams p = random_gmm(rng, 1, 1, 3);
    const std::vector<double> mu(p.mean(0).begin(), p.mean(0).end());
    const auto lv = p.log_var(0);
    const double expected = -0.5 * (3 * kLog2Pi + std::accumulate(lv.begin(), lv.end(), 0.0));
    const double at_mode = component_log_density(p, 0, 0, mu);
    EXPECT_NEAR(at_mode, expected, 1e-12);
    auto off = mu;
    off[rng.uniform_index(3)] += 0.1;
    EXPECT_LT(component_log_density(p, 0, 0, off), at_mode);
  }
}

TEST(GmmNll, SingleComponentClosedForm) {
  GmmParams p(1, 1, 1);
  p.means[0] = 0.7;
  const Mat z = Mat::from_rows({{0.7}});
  EXPECT_NEAR(gmm_nll(p, z), 0.5 * kLog2Pi, 1e-12);
}

TEST(GmmNll, DuplicatedBatchDoubles) {
  Rng rng(22);
  const GmmParams p = random_gmm(rng, 2, 3, 4);
  const Mat z = random_batch(rng, 10, 4);
  Mat zz(20, 4);
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t d = 0; d < 4; ++d) zz(t, d) = z(t % 10, d);
  EXPECT_NEAR(gmm_nll(p, zz), 2.0 * gmm_nll(p, z), 1e-12 * std::abs(gmm_nll(p, zz)));
}

TEST(GmmNll, MatchesNaiveEvaluation) {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const GmmParams p = random_gmm(rng, 1 + rng.uniform_index(3), 1 + rng.uniform_index(3),
                                   1 + rng.uniform_index(5));
    const Mat z = random_batch(rng, 1 + rng.uniform_index(16), p.dim, 1.0);
    EXPECT_NEAR(gmm_nll(p, z), naive_nll(p, z), 1e-9);
  }
}

TEST(GmmNll, FiniteWhereNaiveOverflows) {
  GmmParams p(2, 1, 2);
  p.means = {0.0, 0.0, 1.0, 1.0};
  const Mat z = Mat::from_rows({{200.0, -200.0}});
  EXPECT_FALSE(std::isfinite(naive_nll(p, z)));
  EXPECT_TRUE(std::isfinite(gmm_nll(p, z)));
}

TEST(GmmPosterior, Examples) {
  Rng rng(24);
  GmmParams one = random_gmm(rng, 1, 1, 3);
  const PosteriorTable single = gmm_posterior(one, random_batch(rng, 5, 3));
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(single.at(t, 0, 0), 1.0);

  GmmParams twin(1, 2, 2);
  twin.means = {0.3, -0.2, 0.3, -0.2};
  const PosteriorTable sym = gmm_posterior(twin, random_batch(rng, 5, 2));
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_DOUBLE_EQ(sym.at(t, 0, 0), 0.5);
    EXPECT_DOUBLE_EQ(sym.at(t, 0, 1), 0.5);
  }

  GmmParams pair(2, 1, 1);
  pair.means = {-1.0, 1.0};
  const PosteriorTable post = gmm_posterior(pair, Mat::from_rows({{0.0}, {1.0}}));
  EXPECT_NEAR(post.at(0, 0, 0), 0.5, 1e-15);
  EXPECT_NEAR(post.at(0, 1, 0), 0.5, 1e-15);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(post.at(1, 0, 0), 1.0 / (1.0 + e2), 1e-12);
  EXPECT_NEAR(post.at(1, 1, 0), e2 / (1.0 + e2), 1e-12);
  EXPECT_NEAR(post.at(1, 0, 0), 0.1192, 1e-4);
}

TEST(GmmPosterior, RowsNormalizedNearVarianceFloor) {
  Rng rng(25);
  for (int trial = 0; trial < 100; ++trial) {
    GmmParams p = random_gmm(rng, 1 + rng.uniform_index(3), 1 + rng.uniform_index(3),
                             1 + rng.uniform_index(6));
    // Push a random subset of dimensions down to the floor.
    for (double& lv : p.log_vars)
      if (rng.uniform() < 0.3) lv = std::log(kVarianceFloor);
    const PosteriorTable post = gmm_posterior(p, random_batch(rng, 8, p.dim));
    for (std::size_t t = 0; t < post.values.rows(); ++t) {
      double s = 0.0;
      for (double v : post.values.row(t)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(GmmNllGrad, StationaryAtConcentratedMean) {
  GmmParams p(1, 2, 2);
  p.means = {1.0, 2.0, -50.0, 50.0};
  const Mat z = Mat::from_rows({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}});
  const GmmGrad g = gmm_nll_grad(p, z);
  EXPECT_NEAR(g.means[0], 0.0, 1e-15);
  EXPECT_NEAR(g.means[1], 0.0, 1e-15);
}

TEST(GmmNllGrad, MatchesFiniteDifferences) {
  Rng rng(26);
  for (int trial = 0; trial < 20; ++trial) {
    const GmmParams p = random_gmm(rng, 2, 2, 4);
    const Mat z = random_batch(rng, 16, 4);
    const auto fd = finite_diff_grad(
        [&](std::span<const double> x) { return gmm_nll(unflatten(p, x), z); }, flatten(p), 1e-5);
    EXPECT_LE(max_relative_error(gmm_nll_grad(p, z).flat(), fd), 1e-4);
  }
}

TEST(GmmNllGrad, DuplicatedBatchDoubles) {
  Rng rng(27);
  const GmmParams p = random_gmm(rng, 2, 2, 3);
  const Mat z = random_batch(rng, 6, 3);
  Mat zz(12, 3);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t d = 0; d < 3; ++d) zz(t, d) = z(t % 6, d);
  const auto g1 = gmm_nll_grad(p, z).flat();
  const auto g2 = gmm_nll_grad(p, zz).flat();
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], 2.0 * g1[i], 1e-12);
}

TEST(FlagSlowComponents, DeterministicCases) {
  GmmParams balanced(2, 2, 1);
  Rng rng(28);
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(flag_slow_components(balanced, rng).empty());

  GmmParams dead(2, 2, 1);
  dead.mix_logits = {0.0, 0.0, 0.0, -1e4};  // pi_3 underflows to 0
  ASSERT_EQ(dead.mixing()[3], 0.0);
  for (int i = 0; i < 1000; ++i) {
    const SlowSet s = flag_slow_components(dead, rng);
    EXPECT_TRUE(s.contains(3));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_FALSE(s.contains(k));  // pi_k > 1/(NM)
  }
}

TEST(FlagSlowComponents, EmpiricalRate) {
  // N*M = 2 with pi = (0.75, 0.25): the second component sits at 0.5/(N*M).
  GmmParams p(1, 2, 1);
  p.mix_logits = {std::log(3.0), 0.0};
  ASSERT_NEAR(p.mixing()[1], 0.25, 1e-15);
  Rng rng(29);
  const int trials = 100000;
  int hits = 0;
  for (int i = 0; i < trials; ++i) {
    const SlowSet s = flag_slow_components(p, rng);
    EXPECT_FALSE(s.contains(0));
    hits += s.contains(1);
  }
  const double rate = static_cast<double>(hits) / trials;
  EXPECT_GE(rate, 0.49);
  EXPECT_LE(rate, 0.51);
}

TEST(ReactivationLoss, Identities) {
  Rng rng(30);
  for (int trial = 0; trial < 50; ++trial) {
    const GmmParams p = random_gmm(rng, 1 + rng.uniform_index(3), 1 + rng.uniform_index(3), 3);
    const Mat z = random_batch(rng, 12, 3);
    const std::size_t total = p.total_components();
    EXPECT_EQ(reactivation_loss(p, z, SlowSet::all(total)), gmm_nll(p, z));
    EXPECT_EQ(reactivation_loss(p, z, SlowSet::none(total)), 0.0);

    const std::size_t k = rng.uniform_index(total);
    SlowSet one = SlowSet::none(total);
    one.flags[k] = true;
    const double log_pi = std::log(p.mixing()[k]);
    double expected = 0.0;
    for (std::size_t t = 0; t < z.rows(); ++t)
      expected -= log_pi + component_log_density(p, k / p.n_components, k % p.n_components,
                                                 z.row(t));
    EXPECT_NEAR(reactivation_loss(p, z, one), expected, 1e-9 * std::abs(expected));
  }
}

TEST(ReactivationGrad, FullSetEqualsNllGrad) {
  Rng rng(31);
  const GmmParams p = random_gmm(rng, 2, 3, 4);
  const Mat z = random_batch(rng, 10, 4);
  EXPECT_EQ(reactivation_grad(p, z, SlowSet::all(6)).flat(), gmm_nll_grad(p, z).flat());
  for (double g : reactivation_grad(p, z, SlowSet::none(6)).flat()) EXPECT_EQ(g, 0.0);
}

TEST(ReactivationGrad, MatchesFiniteDifferencesAndZeroOutsideSet) {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    const GmmParams p = random_gmm(rng, 2, 2, 3);
    const Mat z = random_batch(rng, 12, 3);
    const SlowSet s = random_slow(rng, 4);
    const GmmGrad g = reactivation_grad(p, z, s);
    const auto fd = finite_diff_grad(
        [&](std::span<const double> x) { return reactivation_loss(unflatten(p, x), z, s); },
        flatten(p), 1e-5);
    EXPECT_LE(max_relative_error(g.flat(), fd), 1e-4);
    for (std::size_t k = 0; k < 4; ++k) {
      if (s.contains(k)) continue;
      for (std::size_t d = 0; d < 3; ++d) {
        EXPECT_EQ(g.means[k * 3 + d], 0.0);
        EXPECT_EQ(g.log_vars[k * 3 + d], 0.0);
      }
    }
  }
}

TEST(ReactivationGrad, EqualsSubMixtureGradient) {
  // Means and log-variances inside S receive the NLL gradient of the mixture
  // restricted to S with weights renormalized over S.
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const GmmParams p = random_gmm(rng, 2, 2, 3);
    const Mat z = random_batch(rng, 9, 3);
    const SlowSet s = random_slow(rng, 4);
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < 4; ++k)
      if (s.contains(k)) members.push_back(k);
    GmmParams sub(1, members.size(), 3);
    for (std::size_t a = 0; a < members.size(); ++a) {
      sub.mix_logits[a] = p.mix_logits[members[a]];
      std::copy(p.mean(members[a]).begin(), p.mean(members[a]).end(), sub.mean(a).begin());
      std::copy(p.log_var(members[a]).begin(), p.log_var(members[a]).end(),
                sub.log_var(a).begin());
    }
    const GmmGrad full = reactivation_grad(p, z, s);
    const GmmGrad restricted = gmm_nll_grad(sub, z);
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t d = 0; d < 3; ++d) {
        EXPECT_NEAR(full.means[members[a] * 3 + d], restricted.means[a * 3 + d], 1e-10);
        EXPECT_NEAR(full.log_vars[members[a] * 3 + d], restricted.log_vars[a * 3 + d], 1e-10);
      }
    }
  }
}

TEST(InitGmm, Construction) {
  Rng rng(34);
  const Mat sample = random_batch(rng, 20, 3);
  Rng a(5), b(5);
  const GmmParams p = init_gmm(sample, 2, 3, a);
  EXPECT_EQ(p, init_gmm(sample, 2, 3, b));
  for (double pi : p.mixing()) EXPECT_DOUBLE_EQ(pi, 1.0 / 6.0);
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < 6; ++k) {
    bool found = false;
    for (std::size_t t = 0; t < sample.rows() && !found; ++t) {
      if (std::equal(p.mean(k).begin(), p.mean(k).end(), sample.row(t).begin())) {
        found = true;
        EXPECT_EQ(std::count(rows.begin(), rows.end(), t), 0);
        rows.push_back(t);
      }
    }
    EXPECT_TRUE(found);
  }
  Rng c(1);
  EXPECT_THROW(init_gmm(random_batch(rng, 5, 3), 2, 3, c), std::invalid_argument);
}

TEST(ApplyGradient, VarianceFloor) {
  Rng rng(35);
  GmmParams p = random_gmm(rng, 2, 2, 2);
  GmmGrad g(p);
  for (double& x : g.log_vars) x = 1e3;
  apply_gradient(p, g, 1.0);
  for (double lv : p.log_vars) EXPECT_GE(std::exp(lv), kVarianceFloor * (1 - 1e-12));
}

TEST(GmmParams, JsonRoundTripAndValidation) {
  Rng rng(36);
  const GmmParams p = random_gmm(rng, 2, 3, 2);
  nlohmann::ordered_json j;
  to_json(j, p);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"n_experts", "n_components", "dim", "mix_logits",
                                            "means", "log_vars"}));
  GmmParams back;
  from_json(j, back);
  EXPECT_EQ(back, p);

  GmmParams bad = p;
  bad.means.pop_back();
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = p;
  bad.log_vars[0] = NAN;
  EXPECT_THROW(bad.validate(), NonFiniteError);
}

TEST(GmmParams, MixingSumsToOne) {
  Rng rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    GmmParams p = random_gmm(rng, 1 + rng.uniform_index(4), 1 + rng.uniform_index(4), 1);
    for (double& x : p.mix_logits) x *= 20.0;
    const auto pi = p.mixing();
    EXPECT_NEAR(std::accumulate(pi.begin(), pi.end(), 0.0), 1.0, 1e-12);
  }
}
