// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two routers:
//  * baseline token-choice gating, p_t = softmax(u_t . E), top-k selection,
//    gates equal to the selected probabilities (not renormalized), with the
//    auxiliary balance loss alpha * sum_i f_i * pbar_i;
//  * IDA routing, where each of the k ranks owns an independent GMM over the
//    latent space and picks the expert whose best component has the highest
//    posterior. IDA decisions never depend on expert or head parameters.

#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "idamoe/gmm.hpp"
#include "idamoe/numerics.hpp"
#include "idamoe/routing_decision.hpp"

namespace idamoe {

struct BaselineRouterParams {
  Mat expert_embeddings;  // d x N, column i is e_i

  std::size_t input_dim() const noexcept { return expert_embeddings.rows(); }
  std::size_t n_experts() const noexcept { return expert_embeddings.cols(); }
};

/// Entries uniform in [-scale/sqrt(d), scale/sqrt(d)].
BaselineRouterParams make_baseline_router(std::size_t input_dim, std::size_t n_experts, Rng& rng,
                                          double scale = 1.0);

RoutingDecision baseline_route(const BaselineRouterParams& params, const Mat& tokens,
                               std::size_t k);

/// dL/dE given dL/dp (T x N), chained through the per-token softmax.
Mat baseline_probs_backward(const RoutingDecision& decisions, const Mat& tokens,
                            const Mat& prob_grad);

/// dL/dE given dL/dG (T x k); gates are the selected entries of p.
Mat baseline_gate_backward(const RoutingDecision& decisions, const Mat& tokens,
                           const Mat& gate_grad);

struct AuxBalanceReport {
  std::vector<double> f;
  std::vector<double> p_bar;
  double loss = 0.0;
};

AuxBalanceReport aux_balance_loss(const RoutingDecision& decisions, std::size_t n_experts,
                                  std::size_t k, double alpha);

/// Gradient of the balance loss with respect to E, holding f fixed.
Mat aux_balance_grad(const RoutingDecision& decisions, const Mat& tokens,
                     const BaselineRouterParams& params, std::size_t n_experts, std::size_t k,
                     double alpha);

enum class GateLogits {
  raw_posterior,  // softmax over P* scores as-is
  log_posterior,  // softmax over log P*, i.e. P* renormalized over the k ranks
};

struct IdaRouterParams {
  std::vector<GmmParams> gmm_sets;  // one per rank

  std::size_t top_k() const noexcept { return gmm_sets.size(); }
  void validate() const;
};

/// Per rank j: P*_j(i) = max_m P_j(i, m | z); the rank takes the best expert not
/// already chosen by a lower rank. Gates are softmax over the retained scores.
/// `full_probs` is filled with ida_expert_distribution.
RoutingDecision ida_route(const IdaRouterParams& params, const Mat& latents, std::size_t k,
                          GateLogits gate_logits = GateLogits::raw_posterior);

struct IdaSetLosses {
  double nll = 0.0;
  double react = 0.0;
  SlowSet slow;
  GmmGrad nll_grad;
  GmmGrad react_grad;
};

/// Independent per-set NLL and (optionally) reactivation terms, unweighted.
std::vector<IdaSetLosses> ida_losses(const IdaRouterParams& params, const Mat& latents, Rng& rng,
                                     bool reactivation_on);

void to_json(nlohmann::ordered_json& j, const BaselineRouterParams& params);
void from_json(const nlohmann::ordered_json& j, BaselineRouterParams& params);
void to_json(nlohmann::ordered_json& j, const IdaRouterParams& params);
void from_json(const nlohmann::ordered_json& j, IdaRouterParams& params);

}  // namespace idamoe
