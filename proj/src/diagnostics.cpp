// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/diagnostics.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace idamoe {

GradDecomposition grad_decompose(const ExpertPool& pool, const RoutingDecision& decisions,
                                 const Mat& tokens, const Mat& task_grad) {
  const std::size_t T = tokens.rows();
  const std::size_t n = decisions.n_experts;
  const std::size_t d = tokens.cols();
  if (task_grad.rows() != T || task_grad.cols() != d) {
    throw std::invalid_argument("grad_decompose: task gradient shape does not match tokens");
  }

  GradDecomposition out{Mat(T, n),          std::vector<double>(T, 0.0),
                        decisions.full_probs, std::vector<bool>(T * n, false),
                        Mat(n, d),          Mat(n, d),
                        Mat(n, d)};
  const MoEOutput moe = moe_forward(pool, decisions, tokens);
  for (std::size_t t = 0; t < T; ++t) {
    const auto u = tokens.row(t);
    const auto g = task_grad.row(t);
    for (std::size_t i = 0; i < n; ++i) out.mu(t, i) = dot(g, ffn_forward(pool.experts[i], u));
    for (std::size_t j = 0; j < decisions.top_k; ++j) out.delta[t * n + decisions.expert(t, j)] = true;
    out.mu_bar[t] = dot(g, moe.outputs.row(t));

    for (std::size_t i = 0; i < n; ++i) {
      const double p = out.p(t, i);
      if (out.selected(t, i)) {
        axpy(p * (out.mu(t, i) - out.mu_bar[t]), u, out.steering_grad.row(i));
      } else {
        axpy(-p * out.mu_bar[t], u, out.renorm_grad.row(i));
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.per_expert_grad.row(i);
    axpy(1.0, out.steering_grad.row(i), row);
    axpy(1.0, out.renorm_grad.row(i), row);
  }
  return out;
}

double coefficient_of_variation(std::span<const std::size_t> counts) {
  if (counts.empty()) return 0.0;
  const double n = static_cast<double>(counts.size());
  double mean = 0.0;
  for (std::size_t c : counts) mean += static_cast<double>(c);
  mean /= n;
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (std::size_t c : counts) {
    const double diff = static_cast<double>(c) - mean;
    var += diff * diff;
  }
  return std::sqrt(var / n) / mean;
}

double cv_mean(const std::vector<std::vector<std::size_t>>& counts_series) {
  if (counts_series.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : counts_series) sum += coefficient_of_variation(c);
  return sum / static_cast<double>(counts_series.size());
}

double routing_entropy(std::span<const double> probs) {
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("routing_entropy: row sums to " + std::to_string(total));
  }
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

double mean_routing_entropy(const Mat& probs) {
  if (probs.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < probs.rows(); ++t) sum += routing_entropy(probs.row(t));
  return sum / static_cast<double>(probs.rows());
}

Mat ida_expert_distribution(const RoutingDecision& decisions) {
  if (decisions.rank_expert_scores.size() != decisions.top_k || decisions.top_k == 0) {
    throw std::invalid_argument("ida_expert_distribution: per-rank scores missing");
  }
  const std::size_t T = decisions.tokens();
  const std::size_t n = decisions.n_experts;
  const double inv_k = 1.0 / static_cast<double>(decisions.top_k);
  Mat out(T, n);
  for (const Mat& scores : decisions.rank_expert_scores) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto row = scores.row(t);
      const double total = std::accumulate(row.begin(), row.end(), 0.0);
      axpy(inv_k / total, row, out.row(t));
    }
  }
  return out;
}

}  // namespace idamoe
