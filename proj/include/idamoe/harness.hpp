// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic clustered regression task, one-layer MoE model, and the training
// loop that compares routers under the composite objective.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "idamoe/diagnostics.hpp"
#include "idamoe/experts.hpp"
#include "idamoe/gmm.hpp"
#include "idamoe/numerics.hpp"
#include "idamoe/projector.hpp"
#include "idamoe/routers.hpp"

namespace idamoe {

/// Generation parameters for a SyntheticTaskSpec.
struct TaskConfig {
  std::size_t n_clusters = 8;
  std::size_t dim = 32;
  std::size_t out_dim = 4;
  double cluster_radius = 3.0;   // norm of each cluster's own offset
  double shared_offset = 2.0;    // norm of the mean vector common to all clusters
  double cluster_scale = 0.5;    // per-dimension token spread around a cluster mean
  double target_scale = 1.0;
  double noise_std = 0.0;
  std::uint64_t seed = 1;
};

struct SyntheticTaskSpec {
  std::size_t n_clusters = 0;
  std::size_t dim = 0;
  std::size_t out_dim = 0;
  Mat cluster_means;           // C x d
  double cluster_scale = 0.0;
  std::vector<Mat> target_maps;  // C of (d_out x d)
  Mat target_biases;             // C x d_out
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Cluster means are shared_offset * v0 + cluster_radius * v_c for random unit
/// vectors; target maps have N(0, target_scale^2 / d) entries.
SyntheticTaskSpec make_task(const TaskConfig& cfg);

struct Batch {
  Mat inputs;   // T x d
  Mat targets;  // T x d_out
  std::vector<std::size_t> labels;
};

Batch gen_batch(const SyntheticTaskSpec& spec, Rng& rng, std::size_t tokens);

enum class RouterKind { baseline_no_aux, baseline_aux, ida };

std::string_view to_string(RouterKind kind);
RouterKind router_kind_from_string(std::string_view name);

struct TrainConfig {
  RouterKind router_kind = RouterKind::ida;
  std::size_t n_experts = 4;
  std::size_t n_components = 4;   // full scale: 16
  std::size_t top_k = 2;
  std::size_t input_dim = 32;
  std::size_t latent_dim = 8;     // full scale: 32
  std::size_t hidden_dim = 16;
  std::size_t out_dim = 4;
  double alpha = 0.01;            // weight of the reconstruction loss
  double beta = 0.01;             // weight of the GMM and reactivation losses
  double aux_alpha = 0.01;        // balance-loss coefficient for baseline_aux
  bool reactivation_on = true;
  double lr = 0.003;
  std::size_t steps = 2000;
  std::size_t batch_tokens = 256;
  std::uint64_t seed = 1;
  std::size_t warmup_steps = 200;
  double warmup_lr = 2.0;             // GMM warm-up, on the per-token mean NLL
  double projector_warmup_lr = 0.05;
  double router_init_scale = 0.5;
  GateLogits gate_logits = GateLogits::raw_posterior;
  std::size_t final_window = 200;

  void validate() const;
};

struct ModelState {
  ExpertPool pool;
  std::optional<BaselineRouterParams> baseline;
  std::optional<IdaRouterParams> ida;
  std::optional<AutoencoderParams> projector;
  Mat head_weight;                // d_out x d
  std::vector<double> head_bias;  // d_out
};

/// Fresh model. For IDA the projector and GMM sets are bootstrapped on a
/// warm-up sample of 4*N*M tokens drawn from a fork of `root`.
ModelState init_model(const TrainConfig& cfg, const SyntheticTaskSpec& spec, const Rng& root);

/// Forward pass results for one batch.
struct ForwardPass {
  RoutingDecision decisions;
  Mat latents;      // IDA only
  Mat moe_output;   // T x d, before the residual
  Mat predictions;  // T x d_out
  double loss_task = 0.0;
};

ForwardPass forward(const ModelState& state, const TrainConfig& cfg, const Mat& inputs,
                    const Mat& targets);

struct StepGradients {
  MoEGrad experts;
  Mat head_weight;
  std::vector<double> head_bias;
  Mat tokens;  // dL_total/du_t, the gradient a backbone would receive
  std::optional<Mat> router;
  std::optional<AutoencoderGrad> projector;
  std::vector<GmmGrad> gmm;
  MetricsRecord metrics;
};

/// All gradients of the configured objective for one batch. Reactivation flags draw from `rng`.
StepGradients compute_gradients(const ModelState& state, const TrainConfig& cfg,
                                const Batch& batch, Rng& rng);

/// One plain gradient-descent step; returns the batch metrics.
/// Throws NonFiniteError when the objective is not finite.
MetricsRecord train_step(ModelState& state, const TrainConfig& cfg, const Batch& batch, Rng& rng,
                         std::size_t step);

struct ExperimentResult {
  std::vector<MetricsRecord> series;
  ModelState final_state;
};

ExperimentResult run_experiment_full(const TrainConfig& cfg, const SyntheticTaskSpec& spec);
std::vector<MetricsRecord> run_experiment(const TrainConfig& cfg, const SyntheticTaskSpec& spec);

struct WindowSummary {
  double cv_mean = 0.0;
  double entropy_mean = 0.0;
  double task_loss = 0.0;
};

/// Averages over series[begin, begin + count), clipped to the series.
WindowSummary summarize_window(const std::vector<MetricsRecord>& series, std::size_t begin,
                               std::size_t count);
WindowSummary first_window(const std::vector<MetricsRecord>& series, std::size_t window);
WindowSummary final_window(const std::vector<MetricsRecord>& series, std::size_t window);

enum class AblationAxis { latent_dim, centers, reactivation };

std::string_view to_string(AblationAxis axis);
AblationAxis ablation_axis_from_string(std::string_view name);

struct AblationRow {
  std::string value;
  TrainConfig config;
  WindowSummary final;
};

/// Applies one axis value to a config ("on"/"off"/"1"/"0" for reactivation).
TrainConfig with_axis_value(const TrainConfig& base, AblationAxis axis, const std::string& value);

std::vector<AblationRow> ablation_sweep(const TrainConfig& base, const SyntheticTaskSpec& spec,
                                        AblationAxis axis, const std::vector<std::string>& values);

void to_json(nlohmann::ordered_json& j, const ModelState& state);

}  // namespace idamoe
