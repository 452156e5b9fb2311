// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "idamoe/diagnostics.hpp"
#include "idamoe/experts.hpp"
#include "idamoe/gmm.hpp"
#include "idamoe/numerics.hpp"
#include "idamoe/projector.hpp"
#include "idamoe/routers.hpp"

namespace idamoe {

namespace {

// Returned when a perturbed evaluation changes a routing selection.
struct Flipped {};

std::size_t draw_count(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

Mat normal_mat(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  Mat m(rows, cols);
  for (double& x : m.flat()) x = scale * rng.normal();
  return m;
}

void corrupt_largest(std::vector<double>& analytic) {
  if (analytic.empty()) return;
  auto it = std::max_element(analytic.begin(), analytic.end(),
                             [](double a, double b) { return std::abs(a) < std::abs(b); });
  *it *= 1.01;
}

GmmParams random_gmm(Rng& rng) {
  GmmParams g(draw_count(rng, 1, 3), draw_count(rng, 1, 3), draw_count(rng, 1, 6));
  for (double& x : g.mix_logits) x = rng.normal();
  for (double& x : g.means) x = rng.normal();
  for (double& x : g.log_vars) x = rng.uniform(-1.0, 1.0);
  return g;
}

double gmm_instance(Rng& rng, bool reactivation, const GradCheckOptions& opts) {
  const GmmParams g = random_gmm(rng);
  const Mat z = normal_mat(draw_count(rng, 1, 32), g.dim, rng, 1.5);
  SlowSet slow = SlowSet::all(g.total_components());
  if (reactivation) {
    do {
      for (std::size_t k = 0; k < slow.flags.size(); ++k) slow.flags[k] = rng.bernoulli(0.5);
    } while (slow.empty());
  }
  const auto x = flatten(g);
  const auto f = [&](std::span<const double> p) {
    const GmmParams q = unflatten(g, p);
    return reactivation ? reactivation_loss(q, z, slow) : gmm_nll(q, z);
  };
  auto analytic = (reactivation ? reactivation_grad(g, z, slow) : gmm_nll_grad(g, z)).flat();
  if (opts.corrupt == (reactivation ? GradFamily::gmm_react : GradFamily::gmm_nll)) {
    corrupt_largest(analytic);
  }
  return max_relative_error(analytic, finite_diff_grad(f, x, opts.eps));
}

double projector_instance(Rng& rng, const GradCheckOptions& opts) {
  const std::size_t d = draw_count(rng, 2, 6);
  const std::size_t r = draw_count(rng, 1, d - 1);
  AutoencoderParams ae = make_autoencoder(d, r, rng);
  for (double& b : ae.enc_bias) b = 0.3 * rng.normal();
  for (double& b : ae.dec_bias) b = 0.3 * rng.normal();
  const Mat u = normal_mat(draw_count(rng, 1, 16), d, rng, 1.0);
  const auto f = [&](std::span<const double> p) { return recon_loss(unflatten(ae, p), u); };
  auto analytic = flatten(recon_grad(ae, u));
  if (opts.corrupt == GradFamily::projector) corrupt_largest(analytic);
  return max_relative_error(analytic, finite_diff_grad(f, flatten(ae), opts.eps));
}

RoutingDecision random_decisions(std::size_t tokens, std::size_t n, std::size_t k, Rng& rng) {
  RoutingDecision dec;
  dec.n_experts = n;
  dec.top_k = k;
  dec.selected.resize(tokens * k);
  dec.gates = Mat(tokens, k);
  dec.rank_scores = Mat(tokens, k);
  dec.full_probs = Mat(tokens, n);
  std::vector<std::size_t> order(n);
  for (std::size_t t = 0; t < tokens; ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t j = 0; j < k; ++j) {
      std::swap(order[j], order[j + rng.uniform_index(n - j)]);
      dec.selected[t * k + j] = order[j];
      dec.gates(t, j) = rng.uniform(0.05, 1.0);
    }
    for (double& p : dec.full_probs.row(t)) p = 1.0 / static_cast<double>(n);
  }
  return dec;
}

// 0.5 * sum_t |MoE(u_t) - y_t|^2, differentiated w.r.t. expert parameters,
// tokens and gates together.
double experts_instance(Rng& rng, const GradCheckOptions& opts) {
  const std::size_t n = draw_count(rng, 1, 4);
  const std::size_t k = draw_count(rng, 1, n);
  const std::size_t d = draw_count(rng, 1, 5);
  const std::size_t h = draw_count(rng, 1, 5);
  const std::size_t T = draw_count(rng, 1, 12);
  const ExpertPool pool = make_expert_pool(n, d, h, rng.fork(rng.next_u64()));
  const RoutingDecision dec = random_decisions(T, n, k, rng);
  const Mat u = normal_mat(T, d, rng, 1.0);
  const Mat y = normal_mat(T, d, rng, 1.0);

  const std::size_t n_params = flatten(pool).size();
  std::vector<double> x = flatten(pool);
  x.insert(x.end(), u.flat().begin(), u.flat().end());
  x.insert(x.end(), dec.gates.flat().begin(), dec.gates.flat().end());

  const auto loss = [&](const ExpertPool& p, const Mat& tokens, const RoutingDecision& dd) {
    const Mat out = moe_forward(p, dd, tokens).outputs;
    double s = 0.0;
    for (std::size_t i = 0; i < out.flat().size(); ++i) {
      const double diff = out.flat()[i] - y.flat()[i];
      s += 0.5 * diff * diff;
    }
    return s;
  };
  const auto f = [&](std::span<const double> v) {
    const ExpertPool p = unflatten(pool, v.subspan(0, n_params));
    const auto tok = v.subspan(n_params, T * d);
    const auto gates = v.subspan(n_params + T * d, T * k);
    RoutingDecision dd = dec;
    std::copy(gates.begin(), gates.end(), dd.gates.flat().begin());
    return loss(p, Mat(T, d, std::vector<double>(tok.begin(), tok.end())), dd);
  };

  Mat upstream = moe_forward(pool, dec, u).outputs;
  for (std::size_t i = 0; i < upstream.flat().size(); ++i) upstream.flat()[i] -= y.flat()[i];
  const MoEGrad g = moe_backward(pool, dec, u, upstream);
  std::vector<double> analytic = flatten(g.experts);
  analytic.insert(analytic.end(), g.tokens.flat().begin(), g.tokens.flat().end());
  analytic.insert(analytic.end(), g.gates.flat().begin(), g.gates.flat().end());
  if (opts.corrupt == GradFamily::experts) corrupt_largest(analytic);
  return max_relative_error(analytic, finite_diff_grad(f, x, opts.eps));
}

// Finite differences that throw Flipped when a perturbed router changes any selection.
std::vector<double> flip_free_fd(const BaselineRouterParams& router, const Mat& u, std::size_t k,
                                 const std::function<double(const RoutingDecision&,
                                                            const BaselineRouterParams&)>& loss,
                                 double eps) {
  const RoutingDecision base = baseline_route(router, u, k);
  const auto f = [&](std::span<const double> e) {
    const BaselineRouterParams p{
        Mat(router.input_dim(), router.n_experts(), std::vector<double>(e.begin(), e.end()))};
    const RoutingDecision dec = baseline_route(p, u, k);
    if (dec.selected != base.selected) throw Flipped{};
    return loss(dec, p);
  };
  return finite_diff_grad(f, router.expert_embeddings.flat(), eps);
}

struct RouterInstance {
  std::size_t n, k, d, T;
  BaselineRouterParams router;
  Mat u;
};

RouterInstance random_router_instance(Rng& rng) {
  RouterInstance in{};
  in.n = draw_count(rng, 2, 4);
  in.k = draw_count(rng, 1, in.n - 1);
  in.d = draw_count(rng, 1, 6);
  in.T = draw_count(rng, 1, 12);
  in.router = make_baseline_router(in.d, in.n, rng, 2.0);
  in.u = normal_mat(in.T, in.d, rng, 1.0);
  return in;
}

// Balance loss plus a random linear functional of the selected gates.
double routers_instance(Rng& rng, const GradCheckOptions& opts) {
  const RouterInstance in = random_router_instance(rng);
  const double alpha = rng.uniform(0.01, 1.0);
  const Mat w = normal_mat(in.T, in.k, rng, 1.0);
  const auto loss = [&](const RoutingDecision& dec, const BaselineRouterParams&) {
    double s = aux_balance_loss(dec, in.n, in.k, alpha).loss;
    for (std::size_t i = 0; i < w.flat().size(); ++i) s += w.flat()[i] * dec.gates.flat()[i];
    return s;
  };
  const auto fd = flip_free_fd(in.router, in.u, in.k, loss, opts.eps);
  const RoutingDecision dec = baseline_route(in.router, in.u, in.k);
  Mat g = aux_balance_grad(dec, in.u, in.router, in.n, in.k, alpha);
  const Mat gate = baseline_gate_backward(dec, in.u, w);
  axpy(1.0, gate.flat(), g.flat());
  auto analytic = g.values();
  if (opts.corrupt == GradFamily::routers) corrupt_largest(analytic);
  return max_relative_error(analytic, fd);
}

// End-to-end regression loss through router, experts, residual and a linear
// head; the assembled decomposition must equal dL/dE.
double decomposition_instance(Rng& rng, const GradCheckOptions& opts) {
  const RouterInstance in = random_router_instance(rng);
  const std::size_t h = draw_count(rng, 1, 5);
  const std::size_t d_out = draw_count(rng, 1, 3);
  const ExpertPool pool = make_expert_pool(in.n, in.d, h, rng.fork(rng.next_u64()));
  const Mat head = normal_mat(d_out, in.d, rng, 0.5);
  const Mat y = normal_mat(in.T, d_out, rng, 1.0);
  const double inv_t = 1.0 / static_cast<double>(in.T);

  const auto residual = [&](const RoutingDecision& dec) {
    Mat hidden = moe_forward(pool, dec, in.u).outputs;
    axpy(1.0, in.u.flat(), hidden.flat());
    Mat r = matmul_nt(hidden, head);
    axpy(-1.0, y.flat(), r.flat());
    return r;
  };
  const auto loss = [&](const RoutingDecision& dec, const BaselineRouterParams&) {
    const Mat r = residual(dec);
    return inv_t * dot(r.flat(), r.flat());
  };
  const auto fd = flip_free_fd(in.router, in.u, in.k, loss, opts.eps);

  const RoutingDecision dec = baseline_route(in.router, in.u, in.k);
  Mat task_grad = matmul(residual(dec), head);
  for (double& v : task_grad.flat()) v *= 2.0 * inv_t;
  const GradDecomposition gd = grad_decompose(pool, dec, in.u, task_grad);
  auto analytic = gd.per_expert_grad.transposed().values();  // N x d -> d x N, like E
  if (opts.corrupt == GradFamily::decomposition) corrupt_largest(analytic);
  return max_relative_error(analytic, fd);
}

}  // namespace

std::string_view to_string(GradFamily family) {
  switch (family) {
    case GradFamily::gmm_nll: return "gmm_nll";
    case GradFamily::gmm_react: return "gmm_react";
    case GradFamily::projector: return "projector";
    case GradFamily::experts: return "experts";
    case GradFamily::routers: return "routers";
    case GradFamily::decomposition: return "decomposition";
  }
  return "unknown";
}

GradFamily grad_family_from_string(std::string_view name) {
  for (GradFamily f : kAllGradFamilies)
    if (to_string(f) == name) return f;
  throw std::invalid_argument("unknown gradient family '" + std::string(name) + "'");
}

FamilyReport check_family(GradFamily family, const GradCheckOptions& opts) {
  FamilyReport rep{family};
  Rng rng = Rng(opts.seed).fork(static_cast<std::uint64_t>(family) + 1);
  const std::size_t max_redraws = 100 * opts.instances + 100;
  while (rep.instances < opts.instances) {
    double err = 0.0;
    try {
      switch (family) {
        case GradFamily::gmm_nll: err = gmm_instance(rng, false, opts); break;
        case GradFamily::gmm_react: err = gmm_instance(rng, true, opts); break;
        case GradFamily::projector: err = projector_instance(rng, opts); break;
        case GradFamily::experts: err = experts_instance(rng, opts); break;
        case GradFamily::routers: err = routers_instance(rng, opts); break;
        case GradFamily::decomposition: err = decomposition_instance(rng, opts); break;
      }
    } catch (const Flipped&) {
      if (++rep.redraws > max_redraws) {
        throw std::runtime_error("check_family: too many selection flips for " +
                                 std::string(to_string(family)));
      }
      continue;
    }
    rep.max_rel_error = std::max(rep.max_rel_error, err);
    ++rep.instances;
  }
  rep.passed = rep.max_rel_error <= opts.tolerance;
  return rep;
}

std::vector<FamilyReport> run_grad_check(const GradCheckOptions& opts) {
  std::vector<FamilyReport> out;
  for (GradFamily f : kAllGradFamilies) out.push_back(check_family(f, opts));
  return out;
}

std::string format_report(const std::vector<FamilyReport>& reports) {
  std::string out;
  bool all = true;
  char line[160];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-14s instances=%-4zu redraws=%-4zu max_rel_err=%.3e  %s\n",
                  std::string(to_string(r.family)).c_str(), r.instances, r.redraws,
                  r.max_rel_error, r.passed ? "PASS" : "FAIL");
    out += line;
    all = all && r.passed;
  }
  out += all ? "grad-check: PASS\n" : "grad-check: FAIL\n";
  return out;
}

}  // namespace idamoe
