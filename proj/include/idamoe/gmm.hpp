// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Diagonal-covariance Gaussian mixture over the latent routing space.
//
// Components are indexed jointly as k = expert * n_components + component.
// Mixing weights are a single softmax over all N*M logits, so pi is a joint
// distribution over (expert, component) pairs. Covariances are diagonal and
// stored as per-dimension log-variances.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "idamoe/numerics.hpp"

namespace idamoe {

inline constexpr double kVarianceFloor = 1e-6;

struct GmmParams {
  std::size_t n_experts = 0;
  std::size_t n_components = 0;
  std::size_t dim = 0;
  std::vector<double> mix_logits;  // N*M
  std::vector<double> means;       // N*M*dim, component-major
  std::vector<double> log_vars;    // N*M*dim, component-major

  GmmParams() = default;
  GmmParams(std::size_t experts, std::size_t components, std::size_t latent_dim);

  std::size_t total_components() const noexcept { return n_experts * n_components; }
  std::size_t index(std::size_t expert, std::size_t component) const noexcept {
    return expert * n_components + component;
  }
  std::span<const double> mean(std::size_t k) const noexcept {
    return {means.data() + k * dim, dim};
  }
  std::span<double> mean(std::size_t k) noexcept { return {means.data() + k * dim, dim}; }
  std::span<const double> log_var(std::size_t k) const noexcept {
    return {log_vars.data() + k * dim, dim};
  }
  std::span<double> log_var(std::size_t k) noexcept { return {log_vars.data() + k * dim, dim}; }

  /// pi_{i,m} flattened in component order.
  std::vector<double> mixing() const;

  /// Throws std::invalid_argument on inconsistent array lengths or non-finite values.
  void validate() const;

  friend bool operator==(const GmmParams&, const GmmParams&) = default;
};

struct GmmGrad {
  std::vector<double> mix_logits;
  std::vector<double> means;
  std::vector<double> log_vars;

  explicit GmmGrad(const GmmParams& shape);
  GmmGrad() = default;

  GmmGrad& operator+=(const GmmGrad& other);
  GmmGrad& operator*=(double s);
  /// Concatenation (logits, means, log_vars), the layout used by flatten().
  std::vector<double> flat() const;
};

/// P(i, m | z_t) for every token; one row per token over the N*M components.
struct PosteriorTable {
  std::size_t n_experts = 0;
  std::size_t n_components = 0;
  Mat values;  // T x (N*M)

  double at(std::size_t t, std::size_t expert, std::size_t component) const {
    return values(t, expert * n_components + component);
  }
};

/// Components flagged by the stochastic slow-component check this step.
struct SlowSet {
  std::vector<bool> flags;  // N*M

  bool empty() const noexcept;
  std::size_t count() const noexcept;
  bool contains(std::size_t k) const { return flags.at(k); }

  static SlowSet all(std::size_t total);
  static SlowSet none(std::size_t total);
};

double component_log_density(const GmmParams& params, std::size_t expert, std::size_t component,
                             std::span<const double> z);

/// -sum_t log sum_{i,m} pi_{i,m} N(z_t | mu_{i,m}, Sigma_{i,m}); Z is treated as a constant.
double gmm_nll(const GmmParams& params, const Mat& z);

PosteriorTable gmm_posterior(const GmmParams& params, const Mat& z);

/// Exact gradient of gmm_nll with respect to logits, means and log-variances.
GmmGrad gmm_nll_grad(const GmmParams& params, const Mat& z);

/// Flags component k with probability max(0, 1 - N*M*pi_k), one independent draw per component.
SlowSet flag_slow_components(const GmmParams& params, Rng& rng);

/// -sum_t log sum_{k in S} pi_k N(z_t | mu_k, Sigma_k). Zero for an empty set.
double reactivation_loss(const GmmParams& params, const Mat& z, const SlowSet& slow);

/// Gradient of reactivation_loss. Means and log-variances outside S get exactly
/// zero; logits outside S still receive T*pi_k from the joint softmax
/// normalization. Zero everywhere for an empty set.
GmmGrad reactivation_grad(const GmmParams& params, const Mat& z, const SlowSet& slow);

/// Means drawn without replacement from sample rows, uniform mixing, and
/// per-dimension sample variance for every component.
GmmParams init_gmm(const Mat& sample, std::size_t n_experts, std::size_t n_components, Rng& rng);

/// params -= lr * grad, then the variance floor is enforced.
void apply_gradient(GmmParams& params, const GmmGrad& grad, double lr);
void clamp_variances(GmmParams& params);

/// Flat parameter vector in the order (mix_logits, means, log_vars).
std::vector<double> flatten(const GmmParams& params);
GmmParams unflatten(const GmmParams& shape, std::span<const double> flat);

void to_json(nlohmann::ordered_json& j, const GmmParams& params);
void from_json(const nlohmann::ordered_json& j, GmmParams& params);

}  // namespace idamoe
