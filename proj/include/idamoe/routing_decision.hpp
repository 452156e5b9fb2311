// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "idamoe/numerics.hpp"

namespace idamoe {

/// Per-token output of a router.
///
/// Baseline routers fill `full_probs` with the softmax routing distribution
/// and gate each selected expert with its probability. IDA routers also fill
/// `rank_scores` (the retained P* score per rank) and `rank_expert_scores`
/// (P*_j(i, z_t) for every expert, one T x N matrix per rank).
struct RoutingDecision {
  std::size_t n_experts = 0;
  std::size_t top_k = 0;
  std::vector<std::size_t> selected;  // T*k, rank-major within a token
  Mat gates;                          // T x k
  Mat full_probs;                     // T x N
  Mat rank_scores;                    // T x k, IDA only
  std::vector<Mat> rank_expert_scores;

  std::size_t tokens() const noexcept { return gates.rows(); }
  std::size_t expert(std::size_t t, std::size_t j) const { return selected[t * top_k + j]; }
  bool is_selected(std::size_t t, std::size_t expert) const;

  /// Number of (token, rank) slots assigned to each expert; sums to k*T.
  std::vector<std::size_t> expert_counts() const;
};

}  // namespace idamoe
