// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Routing diagnostics: the task-gradient decomposition for softmax routers,
// load-balance (coefficient of variation) and routing-entropy metrics.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "idamoe/experts.hpp"
#include "idamoe/numerics.hpp"
#include "idamoe/routing_decision.hpp"

namespace idamoe {

/// Decomposition of dL/de_i for a softmax top-k router whose gates are the
/// raw selected probabilities.
///
///   mu(t, i)  = g_t . FFN_i(u_t)       for every expert, selected or not
///   mu_bar(t) = g_t . MoE(u_t)          (residual excluded)
///
/// The exact gradient splits into two parts:
///   steering_grad(i) =  sum_t delta(t,i) p(t,i) (mu(t,i) - mu_bar(t)) u_t
///   renorm_grad(i)   = -sum_t (1 - delta(t,i)) p(t,i) mu_bar(t) u_t
/// The first is the relative-performance term, which is zero for experts that
/// were not selected. The second comes from softmax normalization and only
/// touches non-selected experts. per_expert_grad is their sum.
struct GradDecomposition {
  Mat mu;                      // T x N
  std::vector<double> mu_bar;  // T
  Mat p;                       // T x N
  std::vector<bool> delta;     // T*N
  Mat steering_grad;           // N x d
  Mat renorm_grad;             // N x d
  Mat per_expert_grad;         // N x d, row i is dL/de_i

  bool selected(std::size_t t, std::size_t i) const { return delta[t * p.cols() + i]; }
};

/// `task_grad` is dL/dMoE(u_t) for each token (T x d).
GradDecomposition grad_decompose(const ExpertPool& pool, const RoutingDecision& decisions,
                                 const Mat& tokens, const Mat& task_grad);

/// Population std / mean of one count vector; 0 when the mean is 0.
double coefficient_of_variation(std::span<const std::size_t> counts);

/// Average per-batch coefficient of variation.
double cv_mean(const std::vector<std::vector<std::size_t>>& counts_series);

/// Shannon entropy in bits with 0 log 0 = 0. Throws if the row does not sum to 1 within 1e-6.
double routing_entropy(std::span<const double> probs);

/// Mean routing entropy over the rows of a T x N probability matrix.
double mean_routing_entropy(const Mat& probs);

/// Expert-probability rows for IDA decisions: each rank's P* row normalized
/// over experts, then averaged over the k ranks.
Mat ida_expert_distribution(const RoutingDecision& decisions);

struct MetricsRecord {
  std::size_t step = 0;
  double cv_mean = 0.0;
  double entropy_mean = 0.0;
  std::vector<std::size_t> expert_counts;
  double loss_task = 0.0;
  double loss_ae = 0.0;
  double loss_gmm = 0.0;
  double loss_react = 0.0;
  double loss_aux = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

}  // namespace idamoe
