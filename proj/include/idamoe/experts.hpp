// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Expert FFNs (w2 * tanh(w1 * u + b1) + b2) and the gated mixture over the
// experts a router selected. The residual connection lives in the harness.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "idamoe/numerics.hpp"
#include "idamoe/routing_decision.hpp"

namespace idamoe {

struct ExpertParams {
  Mat w1;                   // h x d
  std::vector<double> b1;   // h
  Mat w2;                   // d x h
  std::vector<double> b2;   // d

  std::size_t input_dim() const noexcept { return w1.cols(); }
  std::size_t hidden_dim() const noexcept { return w1.rows(); }
};

struct ExpertPool {
  std::vector<ExpertParams> experts;

  std::size_t size() const noexcept { return experts.size(); }
  std::size_t input_dim() const { return experts.at(0).input_dim(); }
  std::size_t hidden_dim() const { return experts.at(0).hidden_dim(); }
  /// All experts share (d, h) and have consistent block shapes.
  void validate() const;
};

/// N experts, fan-in uniform weights, zero biases; expert e draws from rng.fork(e).
ExpertPool make_expert_pool(std::size_t n_experts, std::size_t input_dim, std::size_t hidden_dim,
                            const Rng& rng);

std::vector<double> ffn_forward(const ExpertParams& expert, std::span<const double> u);

struct MoEOutput {
  Mat outputs;  // T x d
  RoutingDecision decisions;
};

/// output_t = sum_j G_{t,j} * FFN_{selected(t,j)}(u_t)
MoEOutput moe_forward(const ExpertPool& pool, const RoutingDecision& decisions, const Mat& tokens);

struct ExpertGrad {
  Mat w1;
  std::vector<double> b1;
  Mat w2;
  std::vector<double> b2;
};

struct MoEGrad {
  std::vector<ExpertGrad> experts;
  Mat tokens;  // T x d, through the expert FFNs only (gates held fixed)
  Mat gates;   // T x k, dL/dG_{t,j} = g_t . FFN_{selected(t,j)}(u_t)
  /// Experts selected for at least one token; all others have exactly zero gradient.
  std::vector<bool> touched;
};

MoEGrad moe_backward(const ExpertPool& pool, const RoutingDecision& decisions, const Mat& tokens,
                     const Mat& upstream_grad);

void apply_gradient(ExpertPool& pool, const MoEGrad& grad, double lr);

std::vector<double> flatten(const ExpertPool& pool);
ExpertPool unflatten(const ExpertPool& shape, std::span<const double> flat);
std::vector<double> flatten(const std::vector<ExpertGrad>& grads);

void to_json(nlohmann::ordered_json& j, const ExpertPool& pool);
void from_json(const nlohmann::ordered_json& j, ExpertPool& pool);

}  // namespace idamoe
