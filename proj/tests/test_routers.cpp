// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "idamoe/routers.hpp"

using namespace idamoe;

namespace {

Mat random_mat(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Mat m(r, c);
  for (double& x : m.flat()) x = scale * rng.normal();
  return m;
}

GmmParams random_gmm(Rng& rng, std::size_t n, std::size_t m, std::size_t r) {
  GmmParams p(n, m, r);
  for (double& x : p.mix_logits) x = rng.normal();
  for (double& x : p.means) x = rng.normal();
  for (double& x : p.log_vars) x = rng.uniform(-1.0, 1.0);
  return p;
}

IdaRouterParams random_ida(Rng& rng, std::size_t k, std::size_t n, std::size_t m,
                           std::size_t r) {
  IdaRouterParams p;
  for (std::size_t j = 0; j < k; ++j) p.gmm_sets.push_back(random_gmm(rng, n, m, r));
  return p;
}

// Aux loss as a function of E; nullopt when the selection differs from `ref`.
std::optional<double> aux_at(const Mat& e, const Mat& u, std::size_t k, double alpha,
                             const RoutingDecision& ref) {
  const RoutingDecision d = baseline_route({e}, u, k);
  if (d.selected != ref.selected) return std::nullopt;
  return aux_balance_loss(d, e.cols(), k, alpha).loss;
}

}  // namespace

TEST(BaselineRoute, Examples) {
  BaselineRouterParams tie{Mat::from_rows({{0.3, 0.3}, {-1.0, -1.0}})};
  const RoutingDecision d = baseline_route(tie, Mat::from_rows({{2.0, 1.0}}), 1);
  EXPECT_DOUBLE_EQ(d.full_probs(0, 0), 0.5);
  EXPECT_EQ(d.expert(0, 0), 0u);
  EXPECT_DOUBLE_EQ(d.gates(0, 0), 0.5);

  BaselineRouterParams p{Mat::from_rows({{std::log(2.0), 0.0}})};
  const RoutingDecision e = baseline_route(p, Mat::from_rows({{1.0}}), 1);
  EXPECT_NEAR(e.full_probs(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(e.expert(0, 0), 0u);
  EXPECT_NEAR(e.gates(0, 0), 2.0 / 3.0, 1e-15);
}

TEST(BaselineRoute, FullSelectionAndGateInvariants) {
  Rng rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(4), d = 1 + rng.uniform_index(5);
    const BaselineRouterParams p = make_baseline_router(d, n, rng, 3.0);
    const Mat u = random_mat(rng, 6, d);
    const std::size_t k = 1 + rng.uniform_index(n);
    const RoutingDecision dec = baseline_route(p, u, k);
    for (std::size_t t = 0; t < 6; ++t) {
      double row = 0.0, gsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) row += dec.full_probs(t, i);
      EXPECT_NEAR(row, 1.0, 1e-9);
      for (std::size_t j = 0; j < k; ++j) {
        EXPECT_EQ(dec.gates(t, j), dec.full_probs(t, dec.expert(t, j)));
        for (std::size_t j2 = 0; j2 < j; ++j2) EXPECT_NE(dec.expert(t, j), dec.expert(t, j2));
        gsum += dec.gates(t, j);
      }
      if (k == n) {
        EXPECT_NEAR(gsum, 1.0, 1e-12);
      } else {
        EXPECT_LT(gsum, 1.0);
      }
    }
    const auto counts = dec.expert_counts();
    EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), k * 6);
  }
}

TEST(AuxBalanceLoss, Examples) {
  // Uniform: N=2, k=1, one token per expert, uniform probabilities.
  RoutingDecision uni;
  uni.n_experts = 2;
  uni.top_k = 1;
  uni.selected = {0, 1};
  uni.gates = Mat::from_rows({{0.5}, {0.5}});
  uni.full_probs = Mat::from_rows({{0.5, 0.5}, {0.5, 0.5}});
  const AuxBalanceReport r = aux_balance_loss(uni, 2, 1, 0.01);
  EXPECT_EQ(r.f, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(r.p_bar, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(r.loss, 0.01);

  RoutingDecision skew = uni;
  skew.selected = {0, 0};
  skew.gates = Mat::from_rows({{1.0}, {1.0}});
  skew.full_probs = Mat::from_rows({{1.0, 0.0}, {1.0, 0.0}});
  const AuxBalanceReport s = aux_balance_loss(skew, 2, 1, 0.01);
  EXPECT_EQ(s.f, (std::vector<double>{2.0, 0.0}));
  EXPECT_EQ(s.p_bar, (std::vector<double>{1.0, 0.0}));
  EXPECT_DOUBLE_EQ(s.loss, 0.02);
  EXPECT_EQ(aux_balance_loss(skew, 2, 1, 0.0).loss, 0.0);
}

TEST(AuxBalanceLoss, UniformRoutingGivesAlpha) {
  // N=4, k=2, every expert selected equally often, uniform probabilities.
  RoutingDecision d;
  d.n_experts = 4;
  d.top_k = 2;
  d.gates = Mat(4, 2, 0.25);
  d.full_probs = Mat(4, 4, 0.25);
  d.selected = {0, 1, 2, 3, 1, 2, 3, 0};
  EXPECT_EQ(aux_balance_loss(d, 4, 2, 0.01).loss, 0.01);
}

TEST(AuxBalanceLoss, FractionIdentities) {
  Rng rng(62);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(5), k = 1 + rng.uniform_index(n);
    const BaselineRouterParams p = make_baseline_router(4, n, rng, 2.0);
    const RoutingDecision dec = baseline_route(p, random_mat(rng, 9, 4), k);
    const AuxBalanceReport r = aux_balance_loss(dec, n, k, 0.1);
    EXPECT_NEAR(std::accumulate(r.f.begin(), r.f.end(), 0.0), static_cast<double>(n), 1e-12);
    EXPECT_NEAR(std::accumulate(r.p_bar.begin(), r.p_bar.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(AuxBalanceGrad, MatchesFiniteDifferencesAtFlipFreePoints) {
  Rng rng(63);
  int checked = 0;
  while (checked < 30) {
    const std::size_t n = 2 + rng.uniform_index(3), d = 1 + rng.uniform_index(4);
    const std::size_t k = 1 + rng.uniform_index(n);
    const BaselineRouterParams p = make_baseline_router(d, n, rng, 2.0);
    const Mat u = random_mat(rng, 8, d);
    const RoutingDecision dec = baseline_route(p, u, k);
    bool flipped = false;
    const auto fd = finite_diff_grad(
        [&](std::span<const double> x) {
          const auto v = aux_at(Mat(d, n, std::vector<double>(x.begin(), x.end())), u, k, 0.3, dec);
          if (!v) flipped = true;
          return v.value_or(0.0);
        },
        p.expert_embeddings.flat(), 1e-5);
    if (flipped) continue;
    const Mat g = aux_balance_grad(dec, u, p, n, k, 0.3);
    EXPECT_LE(max_relative_error(g.flat(), fd), 1e-4);
    const Mat zero = aux_balance_grad(dec, u, p, n, k, 0.0);
    for (double x : zero.flat()) EXPECT_EQ(x, 0.0);
    ++checked;
  }
}

TEST(AuxBalanceGrad, SymmetricForEqualEmbeddings) {
  // All embeddings equal: p is uniform, so dL/de_i depends on i only through f_i.
  Rng rng(64);
  BaselineRouterParams p{Mat(3, 4)};
  for (std::size_t r = 0; r < 3; ++r) {
    const double v = rng.normal();
    for (std::size_t i = 0; i < 4; ++i) p.expert_embeddings(r, i) = v;
  }
  const Mat u = random_mat(rng, 10, 3);
  const RoutingDecision dec = baseline_route(p, u, 2);
  const Mat g = aux_balance_grad(dec, u, p, 4, 2, 1.0);
  const AuxBalanceReport rep = aux_balance_loss(dec, 4, 2, 1.0);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      if (rep.f[a] == rep.f[b]) {
        for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(g(r, a), g(r, b), 1e-12);
      }
}

TEST(BaselineBackward, GateAndProbPathsMatchFiniteDifferences) {
  Rng rng(65);
  int checked = 0;
  while (checked < 20) {
    const std::size_t n = 3, d = 3, k = 2;
    const BaselineRouterParams p = make_baseline_router(d, n, rng, 2.0);
    const Mat u = random_mat(rng, 5, d);
    const RoutingDecision dec = baseline_route(p, u, k);
    const Mat w = random_mat(rng, 5, k);
    bool flipped = false;
    const auto fd = finite_diff_grad(
        [&](std::span<const double> x) {
          const RoutingDecision dd =
              baseline_route({Mat(d, n, std::vector<double>(x.begin(), x.end()))}, u, k);
          if (dd.selected != dec.selected) flipped = true;
          double s = 0.0;
          for (std::size_t i = 0; i < w.size(); ++i) s += w.flat()[i] * dd.gates.flat()[i];
          return s;
        },
        p.expert_embeddings.flat(), 1e-5);
    if (flipped) continue;
    EXPECT_LE(max_relative_error(baseline_gate_backward(dec, u, w).flat(), fd), 1e-4);
    ++checked;
  }
}

TEST(IdaRoute, HandExample) {
  IdaRouterParams p;
  GmmParams g(2, 1, 1);
  g.means = {-1.0, 1.0};
  p.gmm_sets.push_back(g);
  const RoutingDecision d = ida_route(p, Mat::from_rows({{1.0}}), 1);
  EXPECT_EQ(d.expert(0, 0), 1u);
  EXPECT_EQ(d.gates(0, 0), 1.0);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(d.rank_scores(0, 0), e2 / (1.0 + e2), 1e-12);
}

TEST(IdaRoute, DuplicateRuleTakesNextBest) {
  Rng rng(66);
  const GmmParams g = random_gmm(rng, 4, 2, 3);
  IdaRouterParams p{{g, g}};
  const Mat z = random_mat(rng, 20, 3);
  const RoutingDecision d = ida_route(p, z, 2);
  for (std::size_t t = 0; t < 20; ++t) {
    const auto& scores = d.rank_expert_scores[0];
    const auto order = argtop_k(scores.row(t), 2);
    EXPECT_EQ(d.expert(t, 0), order[0]);
    EXPECT_EQ(d.expert(t, 1), order[1]);
  }
}

TEST(IdaRoute, EqualScoresGiveEqualGates) {
  IdaRouterParams p;
  for (int j = 0; j < 3; ++j) p.gmm_sets.emplace_back(3, 1, 2);  // identical components
  const RoutingDecision d = ida_route(p, Mat::from_rows({{0.2, -0.4}}), 3);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(d.gates(0, j), 1.0 / 3.0, 1e-15);
}

TEST(IdaRoute, Invariants) {
  Rng rng(67);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(4), k = 1 + rng.uniform_index(n);
    const IdaRouterParams p = random_ida(rng, k, n, 1 + rng.uniform_index(3), 3);
    const Mat z = random_mat(rng, 10, 3, 1.5);
    for (GateLogits mode : {GateLogits::raw_posterior, GateLogits::log_posterior}) {
      const RoutingDecision d = ida_route(p, z, k, mode);
      for (std::size_t t = 0; t < 10; ++t) {
        double gsum = 0.0, psum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          gsum += d.gates(t, j);
          EXPECT_GE(d.gates(t, j), 0.0);
          for (std::size_t j2 = 0; j2 < j; ++j2) EXPECT_NE(d.expert(t, j), d.expert(t, j2));
          EXPECT_EQ(d.rank_scores(t, j), d.rank_expert_scores[j](t, d.expert(t, j)));
        }
        for (std::size_t i = 0; i < n; ++i) psum += d.full_probs(t, i);
        EXPECT_NEAR(gsum, 1.0, 1e-12);
        EXPECT_NEAR(psum, 1.0, 1e-9);
      }
    }
  }
}

TEST(IdaRoute, RawGatesAreSoftmaxOfScores) {
  Rng rng(68);
  const IdaRouterParams p = random_ida(rng, 2, 4, 2, 2);
  const Mat z = random_mat(rng, 6, 2);
  const RoutingDecision raw = ida_route(p, z, 2, GateLogits::raw_posterior);
  const RoutingDecision lg = ida_route(p, z, 2, GateLogits::log_posterior);
  EXPECT_EQ(raw.selected, lg.selected);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto expect_raw = softmax(raw.rank_scores.row(t));
    const double s = raw.rank_scores(t, 0) + raw.rank_scores(t, 1);
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_NEAR(raw.gates(t, j), expect_raw[j], 1e-15);
      EXPECT_NEAR(lg.gates(t, j), raw.rank_scores(t, j) / s, 1e-12);
    }
  }
}

TEST(IdaRoute, Errors) {
  Rng rng(69);
  const IdaRouterParams p = random_ida(rng, 3, 2, 1, 2);
  EXPECT_THROW(ida_route(p, random_mat(rng, 2, 2), 3), std::invalid_argument);
  const IdaRouterParams q = random_ida(rng, 2, 3, 1, 2);
  EXPECT_THROW(ida_route(q, random_mat(rng, 2, 2), 1), std::invalid_argument);
  IdaRouterParams mixed = q;
  mixed.gmm_sets[1] = random_gmm(rng, 3, 2, 2);
  EXPECT_THROW(mixed.validate(), std::invalid_argument);
}

TEST(IdaLosses, TogglesAndSingleSetIdentity) {
  Rng rng(70);
  const IdaRouterParams p = random_ida(rng, 1, 3, 2, 3);
  const Mat z = random_mat(rng, 12, 3);
  Rng r1(5);
  const auto off = ida_losses(p, z, r1, false);
  ASSERT_EQ(off.size(), 1u);
  EXPECT_EQ(off[0].react, 0.0);
  EXPECT_EQ(off[0].nll, gmm_nll(p.gmm_sets[0], z));
  EXPECT_EQ(off[0].nll_grad.flat(), gmm_nll_grad(p.gmm_sets[0], z).flat());

  Rng r2(5), r3(5);
  const auto on = ida_losses(p, z, r2, true);
  const SlowSet expected = flag_slow_components(p.gmm_sets[0], r3);
  EXPECT_EQ(on[0].slow.flags, expected.flags);
  EXPECT_EQ(on[0].react, reactivation_loss(p.gmm_sets[0], z, expected));
  EXPECT_EQ(on[0].react_grad.flat(), reactivation_grad(p.gmm_sets[0], z, expected).flat());
}

TEST(IdaLosses, SetsAreIndependent) {
  Rng rng(71);
  IdaRouterParams p = random_ida(rng, 2, 3, 2, 3);
  for (double& x : p.gmm_sets[0].mix_logits) x *= 3.0;  // some slow components
  const Mat z = random_mat(rng, 10, 3);
  Rng r1(9);
  const auto base = ida_losses(p, z, r1, true);
  IdaRouterParams q = p;
  q.gmm_sets[1] = random_gmm(rng, 3, 2, 3);
  Rng r2(9);
  const auto pert = ida_losses(q, z, r2, true);
  EXPECT_EQ(base[0].nll, pert[0].nll);
  EXPECT_EQ(base[0].nll_grad.flat(), pert[0].nll_grad.flat());
  EXPECT_EQ(base[0].react_grad.flat(), pert[0].react_grad.flat());
  EXPECT_NE(base[1].nll, pert[1].nll);
}

TEST(RouterParams, JsonRoundTrip) {
  Rng rng(72);
  const BaselineRouterParams b = make_baseline_router(3, 4, rng);
  nlohmann::ordered_json jb;
  to_json(jb, b);
  BaselineRouterParams b2;
  from_json(jb, b2);
  EXPECT_EQ(b2.expert_embeddings, b.expert_embeddings);

  const IdaRouterParams p = random_ida(rng, 2, 3, 2, 2);
  nlohmann::ordered_json jp;
  to_json(jp, p);
  IdaRouterParams p2;
  from_json(jp, p2);
  EXPECT_EQ(p2.gmm_sets, p.gmm_sets);
}
