// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>

namespace idamoe {

namespace {

// Independent streams derived from the experiment seed. Batches and expert
// initialization do not depend on the router kind, so routers are compared on
// identical data and identical starting experts.
enum Stream : std::uint64_t {
  kBatches = 1,
  kExperts = 2,
  kHead = 3,
  kBaselineRouter = 4,
  kProjector = 5,
  kWarmupSample = 6,
  kGmmInit = 7,
  kSlowFlags = 8,
};

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& x : v) x = rng.normal();
    norm = std::sqrt(dot(v, v));
  }
  for (double& x : v) x /= norm;
  return v;
}

void warm_up_projector(AutoencoderParams& ae, const Mat& sample, const TrainConfig& cfg) {
  for (std::size_t s = 0; s < cfg.warmup_steps; ++s) {
    apply_gradient(ae, recon_grad(ae, sample), cfg.projector_warmup_lr);
  }
}

void warm_up_gmm(GmmParams& gmm, const Mat& latents, const TrainConfig& cfg) {
  const double inv_n = 1.0 / static_cast<double>(latents.rows());
  for (std::size_t s = 0; s < cfg.warmup_steps; ++s) {
    GmmGrad g = gmm_nll_grad(gmm, latents);
    g *= inv_n;
    apply_gradient(gmm, g, cfg.warmup_lr);
  }
}

void check_finite(double value, const char* what, std::size_t step) {
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "non-finite " << what << " (" << value << ") at step " << step;
    throw NonFiniteError(os.str());
  }
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (n_clusters == 0 || dim == 0 || out_dim == 0) {
    throw std::invalid_argument("SyntheticTaskSpec: counts must be positive");
  }
  if (cluster_means.rows() != n_clusters || cluster_means.cols() != dim ||
      target_maps.size() != n_clusters || target_biases.rows() != n_clusters ||
      target_biases.cols() != out_dim) {
    throw std::invalid_argument("SyntheticTaskSpec: inconsistent shapes");
  }
  if (cluster_scale < 0.0) {
    throw std::invalid_argument("SyntheticTaskSpec: cluster_scale must be non-negative");
  }
  if (noise_std < 0.0) throw std::invalid_argument("SyntheticTaskSpec: noise_std < 0");
  for (std::size_t a = 0; a < n_clusters; ++a) {
    for (std::size_t b = a + 1; b < n_clusters; ++b) {
      if (std::equal(cluster_means.row(a).begin(), cluster_means.row(a).end(),
                     cluster_means.row(b).begin())) {
        throw std::invalid_argument("SyntheticTaskSpec: duplicate cluster means");
      }
    }
  }
}

SyntheticTaskSpec make_task(const TaskConfig& cfg) {
  if (cfg.cluster_scale < 0.0 || cfg.noise_std < 0.0) {
    throw std::invalid_argument("make_task: scales must be non-negative");
  }
  Rng rng(cfg.seed);
  SyntheticTaskSpec spec;
  spec.n_clusters = cfg.n_clusters;
  spec.dim = cfg.dim;
  spec.out_dim = cfg.out_dim;
  spec.cluster_scale = cfg.cluster_scale;
  spec.noise_std = cfg.noise_std;
  spec.seed = cfg.seed;

  const auto shared = random_unit(cfg.dim, rng);
  spec.cluster_means = Mat(cfg.n_clusters, cfg.dim);
  for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
    const auto dir = random_unit(cfg.dim, rng);
    auto row = spec.cluster_means.row(c);
    axpy(cfg.shared_offset, shared, row);
    axpy(cfg.cluster_radius, dir, row);
  }

  const double w = cfg.target_scale / std::sqrt(static_cast<double>(cfg.dim));
  spec.target_biases = Mat(cfg.n_clusters, cfg.out_dim);
  for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
    Mat map(cfg.out_dim, cfg.dim);
    for (double& x : map.flat()) x = w * rng.normal();
    spec.target_maps.push_back(std::move(map));
    for (double& x : spec.target_biases.row(c)) x = cfg.target_scale * rng.normal();
  }
  spec.validate();
  return spec;
}

Batch gen_batch(const SyntheticTaskSpec& spec, Rng& rng, std::size_t tokens) {
  if (tokens == 0) throw std::invalid_argument("gen_batch: need at least one token");
  Batch b{Mat(tokens, spec.dim), Mat(tokens, spec.out_dim), std::vector<std::size_t>(tokens)};
  for (std::size_t t = 0; t < tokens; ++t) {
    const std::size_t c = rng.uniform_index(spec.n_clusters);
    b.labels[t] = c;
    auto u = b.inputs.row(t);
    const auto mean = spec.cluster_means.row(c);
    for (std::size_t q = 0; q < spec.dim; ++q) u[q] = mean[q] + spec.cluster_scale * rng.normal();
    auto y = b.targets.row(t);
    const auto img = matvec(spec.target_maps[c], u);
    for (std::size_t q = 0; q < spec.out_dim; ++q) {
      y[q] = img[q] + spec.target_biases(c, q) + spec.noise_std * rng.normal();
    }
  }
  return b;
}

std::string_view to_string(RouterKind kind) {
  switch (kind) {
    case RouterKind::baseline_no_aux: return "baseline_no_aux";
    case RouterKind::baseline_aux: return "baseline_aux";
    case RouterKind::ida: return "ida";
  }
  return "unknown";
}

RouterKind router_kind_from_string(std::string_view name) {
  if (name == "baseline_no_aux") return RouterKind::baseline_no_aux;
  if (name == "baseline_aux") return RouterKind::baseline_aux;
  if (name == "ida") return RouterKind::ida;
  throw std::invalid_argument("unknown router kind '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (n_experts == 0 || n_components == 0 || top_k == 0 || input_dim == 0 || latent_dim == 0 ||
      hidden_dim == 0 || out_dim == 0 || batch_tokens == 0) {
    throw std::invalid_argument("TrainConfig: all counts must be >= 1");
  }
  if (top_k > n_experts) throw std::invalid_argument("TrainConfig: top_k exceeds n_experts");
  if (latent_dim >= input_dim) {
    throw std::invalid_argument("TrainConfig: latent_dim must be smaller than input_dim");
  }
  if (!(lr >= 0.0) || !(warmup_lr >= 0.0) || !(projector_warmup_lr >= 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rates must be non-negative");
  }
}

ModelState init_model(const TrainConfig& cfg, const SyntheticTaskSpec& spec, const Rng& root) {
  cfg.validate();
  if (cfg.input_dim != spec.dim || cfg.out_dim != spec.out_dim) {
    throw std::invalid_argument("init_model: config dims do not match the task");
  }
  ModelState s;
  s.pool = make_expert_pool(cfg.n_experts, cfg.input_dim, cfg.hidden_dim, root.fork(kExperts));

  Rng head_rng = root.fork(kHead);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  s.head_weight = Mat(cfg.out_dim, cfg.input_dim);
  for (double& w : s.head_weight.flat()) w = head_rng.uniform(-bound, bound);
  s.head_bias.assign(cfg.out_dim, 0.0);

  if (cfg.router_kind != RouterKind::ida) {
    Rng router_rng = root.fork(kBaselineRouter);
    s.baseline = make_baseline_router(cfg.input_dim, cfg.n_experts, router_rng,
                                      cfg.router_init_scale);
    return s;
  }

  Rng proj_rng = root.fork(kProjector);
  s.projector = make_autoencoder(cfg.input_dim, cfg.latent_dim, proj_rng);
  Rng sample_rng = root.fork(kWarmupSample);
  const Batch sample =
      gen_batch(spec, sample_rng, 4 * cfg.n_experts * cfg.n_components);
  warm_up_projector(*s.projector, sample.inputs, cfg);
  const Mat latents = encode(*s.projector, sample.inputs);

  const Rng gmm_root = root.fork(kGmmInit);
  IdaRouterParams ida;
  for (std::size_t j = 0; j < cfg.top_k; ++j) {
    Rng set_rng = gmm_root.fork(j);
    GmmParams g = init_gmm(latents, cfg.n_experts, cfg.n_components, set_rng);
    warm_up_gmm(g, latents, cfg);
    ida.gmm_sets.push_back(std::move(g));
  }
  s.ida = std::move(ida);
  return s;
}

ForwardPass forward(const ModelState& state, const TrainConfig& cfg, const Mat& inputs,
                    const Mat& targets) {
  ForwardPass fp;
  if (cfg.router_kind == RouterKind::ida) {
    fp.latents = encode(state.projector.value(), inputs);
    fp.decisions = ida_route(state.ida.value(), fp.latents, cfg.top_k, cfg.gate_logits);
  } else {
    fp.decisions = baseline_route(state.baseline.value(), inputs, cfg.top_k);
  }
  fp.moe_output = moe_forward(state.pool, fp.decisions, inputs).outputs;

  const std::size_t T = inputs.rows();
  Mat hidden = fp.moe_output;
  axpy(1.0, inputs.flat(), hidden.flat());
  fp.predictions = matmul_nt(hidden, state.head_weight);
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    auto row = fp.predictions.row(t);
    axpy(1.0, state.head_bias, row);
    for (std::size_t q = 0; q < row.size(); ++q) {
      const double diff = row[q] - targets(t, q);
      loss += diff * diff;
    }
  }
  fp.loss_task = loss / static_cast<double>(T);
  return fp;
}

StepGradients compute_gradients(const ModelState& state, const TrainConfig& cfg,
                                const Batch& batch, Rng& rng) {
  const Mat& U = batch.inputs;
  const std::size_t T = U.rows();
  const ForwardPass fp = forward(state, cfg, U, batch.targets);

  StepGradients g;
  g.metrics.loss_task = fp.loss_task;
  g.metrics.expert_counts = fp.decisions.expert_counts();
  g.metrics.cv_mean = coefficient_of_variation(g.metrics.expert_counts);
  g.metrics.entropy_mean = mean_routing_entropy(fp.decisions.full_probs);

  // Task head on h_t = MoE(u_t) + u_t.
  Mat hidden = fp.moe_output;
  axpy(1.0, U.flat(), hidden.flat());
  Mat dpred(T, cfg.out_dim);
  const double scale = 2.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t q = 0; q < cfg.out_dim; ++q)
      dpred(t, q) = scale * (fp.predictions(t, q) - batch.targets(t, q));
  g.head_weight = matmul_tn(dpred, hidden);
  g.head_bias.assign(cfg.out_dim, 0.0);
  for (std::size_t t = 0; t < T; ++t) axpy(1.0, dpred.row(t), g.head_bias);
  const Mat dhidden = matmul(dpred, state.head_weight);  // dL/dMoE(u_t), also the residual path

  g.experts = moe_backward(state.pool, fp.decisions, U, dhidden);
  g.tokens = dhidden;
  axpy(1.0, g.experts.tokens.flat(), g.tokens.flat());

  if (cfg.router_kind != RouterKind::ida) {
    const BaselineRouterParams& router = state.baseline.value();
    // The router also sees u_t through the logits: dL/du_t += E * dL/dlogits_t.
    Mat prob_grad(T, cfg.n_experts);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < cfg.top_k; ++j)
        prob_grad(t, fp.decisions.expert(t, j)) += g.experts.gates(t, j);
    double aux_loss = 0.0;
    if (cfg.router_kind == RouterKind::baseline_aux) {
      const auto rep = aux_balance_loss(fp.decisions, cfg.n_experts, cfg.top_k, cfg.aux_alpha);
      aux_loss = rep.loss;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < cfg.n_experts; ++i)
          prob_grad(t, i) += cfg.aux_alpha * rep.f[i] / static_cast<double>(T);
    }
    g.router = baseline_probs_backward(fp.decisions, U, prob_grad);
    std::vector<double> dlogit(cfg.n_experts);
    for (std::size_t t = 0; t < T; ++t) {
      const auto p = fp.decisions.full_probs.row(t);
      const double inner = dot(p, prob_grad.row(t));
      for (std::size_t i = 0; i < cfg.n_experts; ++i) dlogit[i] = p[i] * (prob_grad(t, i) - inner);
      axpy(1.0, matvec(router.expert_embeddings, dlogit), g.tokens.row(t));
    }
    g.metrics.loss_aux = aux_loss;
  } else {
    // Stop-gradient: latents are constants for the projector and GMM losses,
    // and nothing below touches g.tokens, the experts or the head.
    const AutoencoderParams& ae = state.projector.value();
    g.metrics.loss_ae = recon_loss(ae, U);
    g.projector = recon_grad(ae, U);
    for (double& x : g.projector->enc_weight.flat()) x *= cfg.alpha;
    for (double& x : g.projector->enc_bias) x *= cfg.alpha;
    for (double& x : g.projector->dec_weight.flat()) x *= cfg.alpha;
    for (double& x : g.projector->dec_bias) x *= cfg.alpha;

    const auto losses = ida_losses(state.ida.value(), fp.latents, rng, cfg.reactivation_on);
    for (const auto& l : losses) {
      g.metrics.loss_gmm += l.nll;
      g.metrics.loss_react += l.react;
      GmmGrad set_grad = l.nll_grad;
      set_grad += l.react_grad;
      set_grad *= cfg.beta;
      g.gmm.push_back(std::move(set_grad));
    }
  }
  return g;
}

MetricsRecord train_step(ModelState& state, const TrainConfig& cfg, const Batch& batch, Rng& rng,
                         std::size_t step) {
  StepGradients g = compute_gradients(state, cfg, batch, rng);
  g.metrics.step = step;
  const auto& m = g.metrics;
  check_finite(m.loss_task, "task loss", step);
  check_finite(m.loss_aux, "balance loss", step);
  check_finite(m.loss_ae, "reconstruction loss", step);
  check_finite(m.loss_gmm, "GMM loss", step);
  check_finite(m.loss_react, "reactivation loss", step);

  const double lr = cfg.lr;
  apply_gradient(state.pool, g.experts, lr);
  axpy(-lr, g.head_weight.flat(), state.head_weight.flat());
  axpy(-lr, g.head_bias, state.head_bias);
  if (g.router) axpy(-lr, g.router->flat(), state.baseline->expert_embeddings.flat());
  if (g.projector) apply_gradient(*state.projector, *g.projector, lr);
  for (std::size_t j = 0; j < g.gmm.size(); ++j) {
    apply_gradient(state.ida->gmm_sets[j], g.gmm[j], lr);
  }
  return g.metrics;
}

ExperimentResult run_experiment_full(const TrainConfig& cfg, const SyntheticTaskSpec& spec) {
  const Rng root(cfg.seed);
  ExperimentResult res{{}, init_model(cfg, spec, root)};
  Rng batch_rng = root.fork(kBatches);
  Rng slow_rng = root.fork(kSlowFlags);
  res.series.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Batch batch = gen_batch(spec, batch_rng, cfg.batch_tokens);
    res.series.push_back(train_step(res.final_state, cfg, batch, slow_rng, step));
  }
  return res;
}

std::vector<MetricsRecord> run_experiment(const TrainConfig& cfg, const SyntheticTaskSpec& spec) {
  return run_experiment_full(cfg, spec).series;
}

WindowSummary summarize_window(const std::vector<MetricsRecord>& series, std::size_t begin,
                               std::size_t count) {
  WindowSummary w;
  const std::size_t end = std::min(series.size(), begin + count);
  if (begin >= end) return w;
  for (std::size_t s = begin; s < end; ++s) {
    w.cv_mean += series[s].cv_mean;
    w.entropy_mean += series[s].entropy_mean;
    w.task_loss += series[s].loss_task;
  }
  const double n = static_cast<double>(end - begin);
  w.cv_mean /= n;
  w.entropy_mean /= n;
  w.task_loss /= n;
  return w;
}

WindowSummary first_window(const std::vector<MetricsRecord>& series, std::size_t window) {
  return summarize_window(series, 0, window);
}

WindowSummary final_window(const std::vector<MetricsRecord>& series, std::size_t window) {
  const std::size_t begin = series.size() > window ? series.size() - window : 0;
  return summarize_window(series, begin, window);
}

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::latent_dim: return "latent_dim";
    case AblationAxis::centers: return "centers";
    case AblationAxis::reactivation: return "reactivation";
  }
  return "unknown";
}

AblationAxis ablation_axis_from_string(std::string_view name) {
  if (name == "latent_dim") return AblationAxis::latent_dim;
  if (name == "centers") return AblationAxis::centers;
  if (name == "reactivation") return AblationAxis::reactivation;
  throw std::invalid_argument("unknown ablation axis '" + std::string(name) + "'");
}

TrainConfig with_axis_value(const TrainConfig& base, AblationAxis axis, const std::string& value) {
  TrainConfig cfg = base;
  auto as_count = [&](const std::string& v) {
    std::size_t n = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || end != v.data() + v.size() || n == 0) {
      throw std::invalid_argument("bad axis value '" + v + "'");
    }
    return n;
  };
  switch (axis) {
    case AblationAxis::latent_dim: cfg.latent_dim = as_count(value); break;
    case AblationAxis::centers: cfg.n_components = as_count(value); break;
    case AblationAxis::reactivation:
      if (value == "on" || value == "1" || value == "true") {
        cfg.reactivation_on = true;
      } else if (value == "off" || value == "0" || value == "false") {
        cfg.reactivation_on = false;
      } else {
        throw std::invalid_argument("bad reactivation value '" + value + "'");
      }
      break;
  }
  cfg.validate();
  return cfg;
}

std::vector<AblationRow> ablation_sweep(const TrainConfig& base, const SyntheticTaskSpec& spec,
                                        AblationAxis axis, const std::vector<std::string>& values) {
  std::vector<AblationRow> rows;
  for (const auto& v : values) {
    AblationRow row{v, with_axis_value(base, axis, v), {}};
    row.final = final_window(run_experiment(row.config, spec), row.config.final_window);
    rows.push_back(std::move(row));
  }
  return rows;
}

void to_json(nlohmann::ordered_json& j, const ModelState& state) {
  j = nlohmann::ordered_json::object();
  j["experts"] = state.pool;
  if (state.baseline) j["baseline_router"] = *state.baseline;
  if (state.ida) j["ida_router"] = *state.ida;
  if (state.projector) j["projector"] = *state.projector;
  j["head"] = nlohmann::ordered_json{{"out_dim", state.head_weight.rows()},
                                     {"input_dim", state.head_weight.cols()},
                                     {"weight", state.head_weight.values()},
                                     {"bias", state.head_bias}};
}

}  // namespace idamoe
