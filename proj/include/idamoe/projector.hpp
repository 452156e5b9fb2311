// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Linear autoencoder that maps tokens into the low-dimensional routing space.
// Token batches enter as constants: nothing here produces a gradient with
// respect to the tokens.

#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "idamoe/numerics.hpp"

namespace idamoe {

using LatentBatch = Mat;

struct AutoencoderParams {
  Mat enc_weight;                 // r x d
  std::vector<double> enc_bias;   // r
  Mat dec_weight;                 // d x r
  std::vector<double> dec_bias;   // d

  std::size_t input_dim() const noexcept { return enc_weight.cols(); }
  std::size_t latent_dim() const noexcept { return enc_weight.rows(); }

  /// Shape consistency and finiteness; does not enforce r < d.
  void validate() const;
};

struct AutoencoderGrad {
  Mat enc_weight;
  std::vector<double> enc_bias;
  Mat dec_weight;
  std::vector<double> dec_bias;
};

/// Fan-in uniform init in [-1/sqrt(d), 1/sqrt(d)], zero biases. Requires latent_dim < input_dim.
AutoencoderParams make_autoencoder(std::size_t input_dim, std::size_t latent_dim, Rng& rng);

LatentBatch encode(const AutoencoderParams& params, const Mat& tokens);
Mat decode(const AutoencoderParams& params, const LatentBatch& latents);

/// (1/T) sum_t ||u_t - decode(encode(u_t))||^2
double recon_loss(const AutoencoderParams& params, const Mat& tokens);
AutoencoderGrad recon_grad(const AutoencoderParams& params, const Mat& tokens);

void apply_gradient(AutoencoderParams& params, const AutoencoderGrad& grad, double lr);

std::vector<double> flatten(const AutoencoderParams& params);
AutoencoderParams unflatten(const AutoencoderParams& shape, std::span<const double> flat);
std::vector<double> flatten(const AutoencoderGrad& grad);

void to_json(nlohmann::ordered_json& j, const AutoencoderParams& params);
void from_json(const nlohmann::ordered_json& j, AutoencoderParams& params);

}  // namespace idamoe
