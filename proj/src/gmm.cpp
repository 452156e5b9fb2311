// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace idamoe {

namespace {

const double kLogTwoPi = std::log(2.0 * std::numbers::pi);
const double kLogVarFloor = std::log(kVarianceFloor);

void check_batch(const GmmParams& params, const Mat& z) {
  if (z.cols() != params.dim) {
    throw std::invalid_argument("gmm: latent batch has " + std::to_string(z.cols()) +
                                " columns, expected " + std::to_string(params.dim));
  }
}

std::vector<double> log_mixing(const GmmParams& params) {
  const double lse = log_sum_exp(params.mix_logits);
  std::vector<double> out(params.mix_logits.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = params.mix_logits[k] - lse;
  return out;
}

double log_density(const GmmParams& params, std::size_t k, std::span<const double> z) {
  const auto mu = params.mean(k);
  const auto rho = params.log_var(k);
  double acc = static_cast<double>(params.dim) * kLogTwoPi;
  for (std::size_t d = 0; d < params.dim; ++d) {
    const double diff = z[d] - mu[d];
    acc += rho[d] + diff * diff * std::exp(-rho[d]);
  }
  return -0.5 * acc;
}

// Joint log-weights log pi_k + log N(z_t | k) for one token.
void log_joint(const GmmParams& params, std::span<const double> log_pi, std::span<const double> z,
               std::span<double> out) {
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = log_pi[k] + log_density(params, k, z);
}

// Shared path for the full mixture and for the reactivation subset. With an
// all-true mask this is exactly gmm_nll, so the two agree bit for bit.
double masked_nll(const GmmParams& params, const Mat& z, const std::vector<bool>& mask,
                  GmmGrad* grad) {
  check_batch(params, z);
  const std::size_t total = params.total_components();
  const auto log_pi = log_mixing(params);
  std::vector<double> pi(total);
  for (std::size_t k = 0; k < total; ++k) pi[k] = std::exp(log_pi[k]);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < total; ++k)
    if (mask[k]) active.push_back(k);
  if (active.empty()) return 0.0;

  std::vector<double> joint(total);
  std::vector<double> sub(active.size());
  double nll = 0.0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    const auto zt = z.row(t);
    log_joint(params, log_pi, zt, joint);
    for (std::size_t a = 0; a < active.size(); ++a) sub[a] = joint[active[a]];
    const double lse = log_sum_exp(sub);
    nll -= lse;
    if (grad == nullptr) continue;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t k = active[a];
      const double gamma = std::exp(sub[a] - lse);
      grad->mix_logits[k] -= gamma;
      const auto mu = params.mean(k);
      const auto rho = params.log_var(k);
      double* gmu = grad->means.data() + k * params.dim;
      double* grho = grad->log_vars.data() + k * params.dim;
      for (std::size_t d = 0; d < params.dim; ++d) {
        const double inv_var = std::exp(-rho[d]);
        const double diff = zt[d] - mu[d];
        gmu[d] -= gamma * diff * inv_var;
        grho[d] += 0.5 * gamma * (1.0 - diff * diff * inv_var);
      }
    }
  }
  if (grad != nullptr) {
    // Softmax normalization: every logit gets +pi_k per token.
    const double tokens = static_cast<double>(z.rows());
    for (std::size_t k = 0; k < total; ++k) grad->mix_logits[k] += tokens * pi[k];
  }
  return nll;
}

}  // namespace

GmmParams::GmmParams(std::size_t experts, std::size_t components, std::size_t latent_dim)
    : n_experts(experts),
      n_components(components),
      dim(latent_dim),
      mix_logits(experts * components, 0.0),
      means(experts * components * latent_dim, 0.0),
      log_vars(experts * components * latent_dim, 0.0) {}

std::vector<double> GmmParams::mixing() const { return softmax(mix_logits); }

void GmmParams::validate() const {
  const std::size_t total = total_components();
  if (total == 0 || dim == 0) throw std::invalid_argument("GmmParams: empty shape");
  if (mix_logits.size() != total || means.size() != total * dim ||
      log_vars.size() != total * dim) {
    throw std::invalid_argument("GmmParams: array lengths do not match (N, M, dim)");
  }
  if (!all_finite(mix_logits) || !all_finite(means) || !all_finite(log_vars)) {
    throw NonFiniteError("GmmParams: non-finite parameter");
  }
}

GmmGrad::GmmGrad(const GmmParams& shape)
    : mix_logits(shape.mix_logits.size(), 0.0),
      means(shape.means.size(), 0.0),
      log_vars(shape.log_vars.size(), 0.0) {}

GmmGrad& GmmGrad::operator+=(const GmmGrad& other) {
  axpy(1.0, other.mix_logits, mix_logits);
  axpy(1.0, other.means, means);
  axpy(1.0, other.log_vars, log_vars);
  return *this;
}

GmmGrad& GmmGrad::operator*=(double s) {
  for (double& x : mix_logits) x *= s;
  for (double& x : means) x *= s;
  for (double& x : log_vars) x *= s;
  return *this;
}

std::vector<double> GmmGrad::flat() const {
  std::vector<double> out;
  out.reserve(mix_logits.size() + means.size() + log_vars.size());
  out.insert(out.end(), mix_logits.begin(), mix_logits.end());
  out.insert(out.end(), means.begin(), means.end());
  out.insert(out.end(), log_vars.begin(), log_vars.end());
  return out;
}

bool SlowSet::empty() const noexcept {
  return std::none_of(flags.begin(), flags.end(), [](bool b) { return b; });
}

std::size_t SlowSet::count() const noexcept {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

SlowSet SlowSet::all(std::size_t total) { return SlowSet{std::vector<bool>(total, true)}; }
SlowSet SlowSet::none(std::size_t total) { return SlowSet{std::vector<bool>(total, false)}; }

double component_log_density(const GmmParams& params, std::size_t expert, std::size_t component,
                             std::span<const double> z) {
  if (z.size() != params.dim) {
    throw std::invalid_argument("component_log_density: latent has length " +
                                std::to_string(z.size()) + ", expected " +
                                std::to_string(params.dim));
  }
  if (expert >= params.n_experts || component >= params.n_components) {
    throw std::out_of_range("component_log_density: component index out of range");
  }
  return log_density(params, params.index(expert, component), z);
}

double gmm_nll(const GmmParams& params, const Mat& z) {
  return masked_nll(params, z, std::vector<bool>(params.total_components(), true), nullptr);
}

PosteriorTable gmm_posterior(const GmmParams& params, const Mat& z) {
  check_batch(params, z);
  const std::size_t total = params.total_components();
  const auto log_pi = log_mixing(params);
  PosteriorTable table{params.n_experts, params.n_components, Mat(z.rows(), total)};
  std::vector<double> joint(total);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    log_joint(params, log_pi, z.row(t), joint);
    const double lse = log_sum_exp(joint);
    auto out = table.values.row(t);
    for (std::size_t k = 0; k < total; ++k) out[k] = std::exp(joint[k] - lse);
  }
  return table;
}

GmmGrad gmm_nll_grad(const GmmParams& params, const Mat& z) {
  GmmGrad grad(params);
  masked_nll(params, z, std::vector<bool>(params.total_components(), true), &grad);
  return grad;
}

SlowSet flag_slow_components(const GmmParams& params, Rng& rng) {
  const auto pi = params.mixing();
  const double scale = static_cast<double>(params.total_components());
  SlowSet slow = SlowSet::none(pi.size());
  for (std::size_t k = 0; k < pi.size(); ++k) {
    const double p = std::max(0.0, 1.0 - scale * pi[k]);
    // Always consume one draw so the stream does not depend on pi.
    const double u = rng.uniform();
    slow.flags[k] = u < p;
  }
  return slow;
}

double reactivation_loss(const GmmParams& params, const Mat& z, const SlowSet& slow) {
  if (slow.flags.size() != params.total_components()) {
    throw std::invalid_argument("reactivation_loss: slow set size mismatch");
  }
  return masked_nll(params, z, slow.flags, nullptr);
}

GmmGrad reactivation_grad(const GmmParams& params, const Mat& z, const SlowSet& slow) {
  if (slow.flags.size() != params.total_components()) {
    throw std::invalid_argument("reactivation_grad: slow set size mismatch");
  }
  GmmGrad grad(params);
  if (slow.empty()) return grad;
  masked_nll(params, z, slow.flags, &grad);
  return grad;
}

GmmParams init_gmm(const Mat& sample, std::size_t n_experts, std::size_t n_components, Rng& rng) {
  const std::size_t total = n_experts * n_components;
  if (total == 0) throw std::invalid_argument("init_gmm: need at least one component");
  if (sample.rows() < total) {
    throw std::invalid_argument("init_gmm: " + std::to_string(sample.rows()) +
                                " samples for " + std::to_string(total) + " components");
  }
  const std::size_t dim = sample.cols();
  GmmParams params(n_experts, n_components, dim);

  // Partial Fisher-Yates: the first `total` slots are a uniform draw without replacement.
  std::vector<std::size_t> order(sample.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t j = k + rng.uniform_index(order.size() - k);
    std::swap(order[k], order[j]);
    const auto src = sample.row(order[k]);
    std::copy(src.begin(), src.end(), params.mean(k).begin());
  }

  const double n = static_cast<double>(sample.rows());
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < sample.rows(); ++t) mean += sample(t, d);
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < sample.rows(); ++t) {
      const double diff = sample(t, d) - mean;
      var += diff * diff;
    }
    const double log_var = std::log(std::max(var / n, kVarianceFloor));
    for (std::size_t k = 0; k < total; ++k) params.log_var(k)[d] = log_var;
  }
  return params;
}

void clamp_variances(GmmParams& params) {
  for (double& rho : params.log_vars) rho = std::max(rho, kLogVarFloor);
}

void apply_gradient(GmmParams& params, const GmmGrad& grad, double lr) {
  axpy(-lr, grad.mix_logits, params.mix_logits);
  axpy(-lr, grad.means, params.means);
  axpy(-lr, grad.log_vars, params.log_vars);
  clamp_variances(params);
}

std::vector<double> flatten(const GmmParams& params) {
  std::vector<double> out;
  out.reserve(params.mix_logits.size() + params.means.size() + params.log_vars.size());
  out.insert(out.end(), params.mix_logits.begin(), params.mix_logits.end());
  out.insert(out.end(), params.means.begin(), params.means.end());
  out.insert(out.end(), params.log_vars.begin(), params.log_vars.end());
  return out;
}

GmmParams unflatten(const GmmParams& shape, std::span<const double> flat) {
  GmmParams p(shape.n_experts, shape.n_components, shape.dim);
  const std::size_t a = p.mix_logits.size();
  const std::size_t b = p.means.size();
  if (flat.size() != a + 2 * b) throw std::invalid_argument("unflatten: length mismatch");
  std::copy(flat.begin(), flat.begin() + a, p.mix_logits.begin());
  std::copy(flat.begin() + a, flat.begin() + a + b, p.means.begin());
  std::copy(flat.begin() + a + b, flat.end(), p.log_vars.begin());
  return p;
}

void to_json(nlohmann::ordered_json& j, const GmmParams& params) {
  j = nlohmann::ordered_json{{"n_experts", params.n_experts},
                             {"n_components", params.n_components},
                             {"dim", params.dim},
                             {"mix_logits", params.mix_logits},
                             {"means", params.means},
                             {"log_vars", params.log_vars}};
}

void from_json(const nlohmann::ordered_json& j, GmmParams& params) {
  params.n_experts = j.at("n_experts").get<std::size_t>();
  params.n_components = j.at("n_components").get<std::size_t>();
  params.dim = j.at("dim").get<std::size_t>();
  params.mix_logits = j.at("mix_logits").get<std::vector<double>>();
  params.means = j.at("means").get<std::vector<double>>();
  params.log_vars = j.at("log_vars").get<std::vector<double>>();
  params.validate();
}

}  // namespace idamoe
