// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/projector.hpp"

#include <cmath>
#include <string>

namespace idamoe {

namespace {

Mat affine_rows(const Mat& x, const Mat& weight, const std::vector<double>& bias) {
  Mat out = matmul_nt(x, weight);
  for (std::size_t t = 0; t < out.rows(); ++t) axpy(1.0, bias, out.row(t));
  return out;
}

void append(std::vector<double>& out, std::span<const double> v) {
  out.insert(out.end(), v.begin(), v.end());
}

}  // namespace

void AutoencoderParams::validate() const {
  const std::size_t d = input_dim();
  const std::size_t r = latent_dim();
  if (d == 0 || r == 0) throw std::invalid_argument("AutoencoderParams: empty shape");
  if (enc_bias.size() != r || dec_weight.rows() != d || dec_weight.cols() != r ||
      dec_bias.size() != d) {
    throw std::invalid_argument("AutoencoderParams: inconsistent block shapes");
  }
  if (!all_finite(enc_weight) || !all_finite(enc_bias) || !all_finite(dec_weight) ||
      !all_finite(dec_bias)) {
    throw NonFiniteError("AutoencoderParams: non-finite parameter");
  }
}

AutoencoderParams make_autoencoder(std::size_t input_dim, std::size_t latent_dim, Rng& rng) {
  if (latent_dim == 0 || latent_dim >= input_dim) {
    throw std::invalid_argument("make_autoencoder: latent dim " + std::to_string(latent_dim) +
                                " must be in [1, " + std::to_string(input_dim) + ")");
  }
  AutoencoderParams p{Mat(latent_dim, input_dim), std::vector<double>(latent_dim, 0.0),
                      Mat(input_dim, latent_dim), std::vector<double>(input_dim, 0.0)};
  const double enc_bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double dec_bound = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (double& w : p.enc_weight.flat()) w = rng.uniform(-enc_bound, enc_bound);
  for (double& w : p.dec_weight.flat()) w = rng.uniform(-dec_bound, dec_bound);
  return p;
}

LatentBatch encode(const AutoencoderParams& params, const Mat& tokens) {
  if (tokens.cols() != params.input_dim()) {
    throw std::invalid_argument("encode: token width " + std::to_string(tokens.cols()) +
                                " != input dim " + std::to_string(params.input_dim()));
  }
  return affine_rows(tokens, params.enc_weight, params.enc_bias);
}

Mat decode(const AutoencoderParams& params, const LatentBatch& latents) {
  if (latents.cols() != params.latent_dim()) {
    throw std::invalid_argument("decode: latent width " + std::to_string(latents.cols()) +
                                " != latent dim " + std::to_string(params.latent_dim()));
  }
  return affine_rows(latents, params.dec_weight, params.dec_bias);
}

double recon_loss(const AutoencoderParams& params, const Mat& tokens) {
  const Mat recon = decode(params, encode(params, tokens));
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    for (std::size_t c = 0; c < tokens.cols(); ++c) {
      const double diff = tokens(t, c) - recon(t, c);
      total += diff * diff;
    }
  }
  return tokens.rows() == 0 ? 0.0 : total / static_cast<double>(tokens.rows());
}

AutoencoderGrad recon_grad(const AutoencoderParams& params, const Mat& tokens) {
  const std::size_t d = params.input_dim();
  const std::size_t r = params.latent_dim();
  AutoencoderGrad g{Mat(r, d), std::vector<double>(r, 0.0), Mat(d, r),
                    std::vector<double>(d, 0.0)};
  if (tokens.rows() == 0) return g;

  const Mat z = encode(params, tokens);
  const Mat recon = decode(params, z);
  const double scale = 2.0 / static_cast<double>(tokens.rows());
  std::vector<double> resid(d);
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    for (std::size_t c = 0; c < d; ++c) resid[c] = scale * (recon(t, c) - tokens(t, c));
    const auto zt = z.row(t);
    for (std::size_t c = 0; c < d; ++c) axpy(resid[c], zt, g.dec_weight.row(c));
    axpy(1.0, resid, g.dec_bias);
    const auto dz = matvec_t(params.dec_weight, resid);
    const auto ut = tokens.row(t);
    for (std::size_t q = 0; q < r; ++q) axpy(dz[q], ut, g.enc_weight.row(q));
    axpy(1.0, dz, g.enc_bias);
  }
  return g;
}

void apply_gradient(AutoencoderParams& params, const AutoencoderGrad& grad, double lr) {
  axpy(-lr, grad.enc_weight.flat(), params.enc_weight.flat());
  axpy(-lr, grad.enc_bias, params.enc_bias);
  axpy(-lr, grad.dec_weight.flat(), params.dec_weight.flat());
  axpy(-lr, grad.dec_bias, params.dec_bias);
}

std::vector<double> flatten(const AutoencoderParams& params) {
  std::vector<double> out;
  append(out, params.enc_weight.flat());
  append(out, params.enc_bias);
  append(out, params.dec_weight.flat());
  append(out, params.dec_bias);
  return out;
}

std::vector<double> flatten(const AutoencoderGrad& grad) {
  std::vector<double> out;
  append(out, grad.enc_weight.flat());
  append(out, grad.enc_bias);
  append(out, grad.dec_weight.flat());
  append(out, grad.dec_bias);
  return out;
}

AutoencoderParams unflatten(const AutoencoderParams& shape, std::span<const double> flat) {
  AutoencoderParams p = shape;
  std::size_t off = 0;
  auto take = [&](std::span<double> dst) {
    if (off + dst.size() > flat.size()) throw std::invalid_argument("unflatten: too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
    off += dst.size();
  };
  take(p.enc_weight.flat());
  take(p.enc_bias);
  take(p.dec_weight.flat());
  take(p.dec_bias);
  if (off != flat.size()) throw std::invalid_argument("unflatten: too long");
  return p;
}

void to_json(nlohmann::ordered_json& j, const AutoencoderParams& params) {
  j = nlohmann::ordered_json{{"input_dim", params.input_dim()},
                             {"latent_dim", params.latent_dim()},
                             {"enc_weight", params.enc_weight.values()},
                             {"enc_bias", params.enc_bias},
                             {"dec_weight", params.dec_weight.values()},
                             {"dec_bias", params.dec_bias}};
}

void from_json(const nlohmann::ordered_json& j, AutoencoderParams& params) {
  const auto d = j.at("input_dim").get<std::size_t>();
  const auto r = j.at("latent_dim").get<std::size_t>();
  params.enc_weight = Mat(r, d, j.at("enc_weight").get<std::vector<double>>());
  params.enc_bias = j.at("enc_bias").get<std::vector<double>>();
  params.dec_weight = Mat(d, r, j.at("dec_weight").get<std::vector<double>>());
  params.dec_bias = j.at("dec_bias").get<std::vector<double>>();
  params.validate();
}

}  // namespace idamoe
