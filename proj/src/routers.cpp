// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/routers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "idamoe/diagnostics.hpp"

namespace idamoe {

BaselineRouterParams make_baseline_router(std::size_t input_dim, std::size_t n_experts, Rng& rng,
                                          double scale) {
  if (input_dim == 0 || n_experts == 0) {
    throw std::invalid_argument("make_baseline_router: counts must be positive");
  }
  BaselineRouterParams p{Mat(input_dim, n_experts)};
  const double bound = scale / std::sqrt(static_cast<double>(input_dim));
  for (double& w : p.expert_embeddings.flat()) w = rng.uniform(-bound, bound);
  return p;
}

RoutingDecision baseline_route(const BaselineRouterParams& params, const Mat& tokens,
                               std::size_t k) {
  const std::size_t n = params.n_experts();
  if (k < 1 || k > n) throw std::invalid_argument("baseline_route: need 1 <= k <= N");
  if (tokens.cols() != params.input_dim()) {
    throw std::invalid_argument("baseline_route: token width does not match router");
  }
  const std::size_t T = tokens.rows();
  RoutingDecision dec;
  dec.n_experts = n;
  dec.top_k = k;
  dec.selected.resize(T * k);
  dec.gates = Mat(T, k);
  dec.full_probs = Mat(T, n);
  dec.rank_scores = Mat(T, k);

  const Mat logits = matmul(tokens, params.expert_embeddings);
  for (std::size_t t = 0; t < T; ++t) {
    const auto p = softmax(logits.row(t));
    std::copy(p.begin(), p.end(), dec.full_probs.row(t).begin());
    const auto top = argtop_k(p, k);
    for (std::size_t j = 0; j < k; ++j) {
      dec.selected[t * k + j] = top[j];
      dec.gates(t, j) = p[top[j]];
    }
  }
  return dec;
}

Mat baseline_probs_backward(const RoutingDecision& decisions, const Mat& tokens,
                            const Mat& prob_grad) {
  const std::size_t n = decisions.n_experts;
  Mat grad(tokens.cols(), n);
  std::vector<double> dlogit(n);
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    const auto p = decisions.full_probs.row(t);
    const auto gp = prob_grad.row(t);
    const double inner = dot(p, gp);
    for (std::size_t i = 0; i < n; ++i) dlogit[i] = p[i] * (gp[i] - inner);
    const auto u = tokens.row(t);
    for (std::size_t c = 0; c < u.size(); ++c) axpy(u[c], dlogit, grad.row(c));
  }
  return grad;
}

Mat baseline_gate_backward(const RoutingDecision& decisions, const Mat& tokens,
                           const Mat& gate_grad) {
  Mat prob_grad(tokens.rows(), decisions.n_experts);
  for (std::size_t t = 0; t < tokens.rows(); ++t)
    for (std::size_t j = 0; j < decisions.top_k; ++j)
      prob_grad(t, decisions.expert(t, j)) += gate_grad(t, j);
  return baseline_probs_backward(decisions, tokens, prob_grad);
}

AuxBalanceReport aux_balance_loss(const RoutingDecision& decisions, std::size_t n_experts,
                                  std::size_t k, double alpha) {
  const std::size_t T = decisions.tokens();
  AuxBalanceReport rep{std::vector<double>(n_experts, 0.0), std::vector<double>(n_experts, 0.0),
                       0.0};
  if (T == 0) return rep;
  const auto counts = decisions.expert_counts();
  const double f_scale = static_cast<double>(n_experts) / (static_cast<double>(k * T));
  for (std::size_t i = 0; i < n_experts; ++i) rep.f[i] = f_scale * static_cast<double>(counts[i]);
  for (std::size_t t = 0; t < T; ++t) axpy(1.0, decisions.full_probs.row(t), rep.p_bar);
  for (double& p : rep.p_bar) p /= static_cast<double>(T);
  rep.loss = alpha * dot(rep.f, rep.p_bar);
  return rep;
}

Mat aux_balance_grad(const RoutingDecision& decisions, const Mat& tokens,
                     const BaselineRouterParams& params, std::size_t n_experts, std::size_t k,
                     double alpha) {
  const std::size_t T = tokens.rows();
  if (alpha == 0.0 || T == 0) return Mat(params.input_dim(), n_experts);
  const auto rep = aux_balance_loss(decisions, n_experts, k, alpha);
  Mat prob_grad(T, n_experts);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < n_experts; ++i)
      prob_grad(t, i) = alpha * rep.f[i] / static_cast<double>(T);
  return baseline_probs_backward(decisions, tokens, prob_grad);
}

void IdaRouterParams::validate() const {
  if (gmm_sets.empty()) throw std::invalid_argument("IdaRouterParams: no GMM sets");
  for (const auto& g : gmm_sets) {
    g.validate();
    if (g.n_experts != gmm_sets[0].n_experts || g.n_components != gmm_sets[0].n_components ||
        g.dim != gmm_sets[0].dim) {
      throw std::invalid_argument("IdaRouterParams: GMM sets do not share (N, M, r)");
    }
  }
}

RoutingDecision ida_route(const IdaRouterParams& params, const Mat& latents, std::size_t k,
                          GateLogits gate_logits) {
  if (params.gmm_sets.size() != k) {
    throw std::invalid_argument("ida_route: " + std::to_string(params.gmm_sets.size()) +
                                " GMM sets for k=" + std::to_string(k));
  }
  const std::size_t n = params.gmm_sets.at(0).n_experts;
  const std::size_t m = params.gmm_sets.at(0).n_components;
  if (k < 1 || k > n) {
    throw std::invalid_argument("ida_route: cannot select k=" + std::to_string(k) +
                                " distinct experts out of " + std::to_string(n));
  }
  const std::size_t T = latents.rows();
  RoutingDecision dec;
  dec.n_experts = n;
  dec.top_k = k;
  dec.selected.resize(T * k);
  dec.gates = Mat(T, k);
  dec.rank_scores = Mat(T, k);

  for (std::size_t j = 0; j < k; ++j) {
    const PosteriorTable post = gmm_posterior(params.gmm_sets[j], latents);
    Mat best(T, n);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        double hi = 0.0;
        for (std::size_t c = 0; c < m; ++c) hi = std::max(hi, post.at(t, i, c));
        best(t, i) = hi;
      }
    }
    dec.rank_expert_scores.push_back(std::move(best));
  }

  std::vector<double> logits(k);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto scores = dec.rank_expert_scores[j].row(t);
      for (std::size_t e : argtop_k(scores, n)) {
        bool taken = false;
        for (std::size_t q = 0; q < j; ++q) taken = taken || dec.selected[t * k + q] == e;
        if (taken) continue;
        dec.selected[t * k + j] = e;
        dec.rank_scores(t, j) = scores[e];
        break;
      }
      const double s = dec.rank_scores(t, j);
      logits[j] = gate_logits == GateLogits::raw_posterior ? s : std::log(s);
    }
    const auto g = softmax(logits);
    std::copy(g.begin(), g.end(), dec.gates.row(t).begin());
  }
  dec.full_probs = ida_expert_distribution(dec);
  return dec;
}

std::vector<IdaSetLosses> ida_losses(const IdaRouterParams& params, const Mat& latents, Rng& rng,
                                     bool reactivation_on) {
  std::vector<IdaSetLosses> out;
  out.reserve(params.gmm_sets.size());
  for (const auto& set : params.gmm_sets) {
    IdaSetLosses l;
    l.nll = gmm_nll(set, latents);
    l.nll_grad = gmm_nll_grad(set, latents);
    if (reactivation_on) {
      l.slow = flag_slow_components(set, rng);
      l.react = reactivation_loss(set, latents, l.slow);
      l.react_grad = reactivation_grad(set, latents, l.slow);
    } else {
      l.slow = SlowSet::none(set.total_components());
      l.react_grad = GmmGrad(set);
    }
    out.push_back(std::move(l));
  }
  return out;
}

void to_json(nlohmann::ordered_json& j, const BaselineRouterParams& params) {
  j = nlohmann::ordered_json{{"input_dim", params.input_dim()},
                             {"n_experts", params.n_experts()},
                             {"expert_embeddings", params.expert_embeddings.values()}};
}

void from_json(const nlohmann::ordered_json& j, BaselineRouterParams& params) {
  const auto d = j.at("input_dim").get<std::size_t>();
  const auto n = j.at("n_experts").get<std::size_t>();
  params.expert_embeddings = Mat(d, n, j.at("expert_embeddings").get<std::vector<double>>());
}

void to_json(nlohmann::ordered_json& j, const IdaRouterParams& params) {
  j = nlohmann::ordered_json{{"gmm_sets", params.gmm_sets}};
}

void from_json(const nlohmann::ordered_json& j, IdaRouterParams& params) {
  params.gmm_sets = j.at("gmm_sets").get<std::vector<GmmParams>>();
  params.validate();
}

}  // namespace idamoe
