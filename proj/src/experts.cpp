// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/experts.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace idamoe {

bool RoutingDecision::is_selected(std::size_t t, std::size_t e) const {
  for (std::size_t j = 0; j < top_k; ++j)
    if (expert(t, j) == e) return true;
  return false;
}

std::vector<std::size_t> RoutingDecision::expert_counts() const {
  std::vector<std::size_t> counts(n_experts, 0);
  for (std::size_t e : selected) ++counts.at(e);
  return counts;
}

void ExpertPool::validate() const {
  if (experts.empty()) throw std::invalid_argument("ExpertPool: no experts");
  const std::size_t d = input_dim();
  const std::size_t h = hidden_dim();
  if (d == 0 || h == 0) throw std::invalid_argument("ExpertPool: empty expert shape");
  for (const auto& e : experts) {
    if (e.w1.rows() != h || e.w1.cols() != d || e.b1.size() != h || e.w2.rows() != d ||
        e.w2.cols() != h || e.b2.size() != d) {
      throw std::invalid_argument("ExpertPool: experts do not share (d, h)");
    }
  }
}

ExpertPool make_expert_pool(std::size_t n_experts, std::size_t input_dim, std::size_t hidden_dim,
                            const Rng& rng) {
  if (n_experts == 0 || input_dim == 0 || hidden_dim == 0) {
    throw std::invalid_argument("make_expert_pool: counts must be positive");
  }
  ExpertPool pool;
  const double b1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (std::size_t e = 0; e < n_experts; ++e) {
    Rng local = rng.fork(e);
    ExpertParams p{Mat(hidden_dim, input_dim), std::vector<double>(hidden_dim, 0.0),
                   Mat(input_dim, hidden_dim), std::vector<double>(input_dim, 0.0)};
    for (double& w : p.w1.flat()) w = local.uniform(-b1, b1);
    for (double& w : p.w2.flat()) w = local.uniform(-b2, b2);
    pool.experts.push_back(std::move(p));
  }
  return pool;
}

std::vector<double> ffn_forward(const ExpertParams& expert, std::span<const double> u) {
  if (u.size() != expert.input_dim()) {
    throw std::invalid_argument("ffn_forward: token length " + std::to_string(u.size()) +
                                " != " + std::to_string(expert.input_dim()));
  }
  auto hidden = matvec(expert.w1, u);
  for (std::size_t q = 0; q < hidden.size(); ++q) hidden[q] = std::tanh(hidden[q] + expert.b1[q]);
  auto out = matvec(expert.w2, hidden);
  axpy(1.0, expert.b2, out);
  return out;
}

namespace {

void check_decisions(const ExpertPool& pool, const RoutingDecision& decisions, const Mat& tokens) {
  if (decisions.tokens() != tokens.rows() ||
      decisions.selected.size() != tokens.rows() * decisions.top_k) {
    throw std::invalid_argument("moe: routing decisions do not match the token batch");
  }
  for (std::size_t e : decisions.selected) {
    if (e >= pool.size()) {
      throw std::out_of_range("moe: expert index " + std::to_string(e) + " out of range");
    }
  }
}

}  // namespace

MoEOutput moe_forward(const ExpertPool& pool, const RoutingDecision& decisions, const Mat& tokens) {
  check_decisions(pool, decisions, tokens);
  MoEOutput out{Mat(tokens.rows(), tokens.cols()), decisions};
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    auto row = out.outputs.row(t);
    for (std::size_t j = 0; j < decisions.top_k; ++j) {
      const auto y = ffn_forward(pool.experts[decisions.expert(t, j)], tokens.row(t));
      axpy(decisions.gates(t, j), y, row);
    }
  }
  return out;
}

MoEGrad moe_backward(const ExpertPool& pool, const RoutingDecision& decisions, const Mat& tokens,
                     const Mat& upstream_grad) {
  check_decisions(pool, decisions, tokens);
  const std::size_t d = pool.input_dim();
  const std::size_t h = pool.hidden_dim();
  MoEGrad grad;
  for (std::size_t e = 0; e < pool.size(); ++e) {
    grad.experts.push_back(ExpertGrad{Mat(h, d), std::vector<double>(h, 0.0), Mat(d, h),
                                      std::vector<double>(d, 0.0)});
  }
  grad.tokens = Mat(tokens.rows(), d);
  grad.gates = Mat(tokens.rows(), decisions.top_k);
  grad.touched.assign(pool.size(), false);

  std::vector<double> hidden(h), dy(d), dpre(h);
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    const auto u = tokens.row(t);
    const auto g = upstream_grad.row(t);
    for (std::size_t j = 0; j < decisions.top_k; ++j) {
      const std::size_t e = decisions.expert(t, j);
      const ExpertParams& p = pool.experts[e];
      ExpertGrad& eg = grad.experts[e];
      grad.touched[e] = true;

      for (std::size_t q = 0; q < h; ++q) hidden[q] = std::tanh(dot(p.w1.row(q), u) + p.b1[q]);
      auto y = matvec(p.w2, hidden);
      axpy(1.0, p.b2, y);
      grad.gates(t, j) = dot(g, y);

      const double gate = decisions.gates(t, j);
      for (std::size_t c = 0; c < d; ++c) dy[c] = gate * g[c];
      for (std::size_t c = 0; c < d; ++c) axpy(dy[c], hidden, eg.w2.row(c));
      axpy(1.0, dy, eg.b2);
      const auto dh = matvec_t(p.w2, dy);
      for (std::size_t q = 0; q < h; ++q) dpre[q] = dh[q] * (1.0 - hidden[q] * hidden[q]);
      for (std::size_t q = 0; q < h; ++q) axpy(dpre[q], u, eg.w1.row(q));
      axpy(1.0, dpre, eg.b1);
      const auto du = matvec_t(p.w1, dpre);
      axpy(1.0, du, grad.tokens.row(t));
    }
  }
  return grad;
}

void apply_gradient(ExpertPool& pool, const MoEGrad& grad, double lr) {
  for (std::size_t e = 0; e < pool.size(); ++e) {
    ExpertParams& p = pool.experts[e];
    const ExpertGrad& g = grad.experts.at(e);
    axpy(-lr, g.w1.flat(), p.w1.flat());
    axpy(-lr, g.b1, p.b1);
    axpy(-lr, g.w2.flat(), p.w2.flat());
    axpy(-lr, g.b2, p.b2);
  }
}

std::vector<double> flatten(const ExpertPool& pool) {
  std::vector<double> out;
  for (const auto& e : pool.experts) {
    out.insert(out.end(), e.w1.values().begin(), e.w1.values().end());
    out.insert(out.end(), e.b1.begin(), e.b1.end());
    out.insert(out.end(), e.w2.values().begin(), e.w2.values().end());
    out.insert(out.end(), e.b2.begin(), e.b2.end());
  }
  return out;
}

std::vector<double> flatten(const std::vector<ExpertGrad>& grads) {
  std::vector<double> out;
  for (const auto& e : grads) {
    out.insert(out.end(), e.w1.values().begin(), e.w1.values().end());
    out.insert(out.end(), e.b1.begin(), e.b1.end());
    out.insert(out.end(), e.w2.values().begin(), e.w2.values().end());
    out.insert(out.end(), e.b2.begin(), e.b2.end());
  }
  return out;
}

ExpertPool unflatten(const ExpertPool& shape, std::span<const double> flat) {
  ExpertPool pool = shape;
  std::size_t off = 0;
  auto take = [&](std::span<double> dst) {
    if (off + dst.size() > flat.size()) throw std::invalid_argument("unflatten: too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
    off += dst.size();
  };
  for (auto& e : pool.experts) {
    take(e.w1.flat());
    take(e.b1);
    take(e.w2.flat());
    take(e.b2);
  }
  if (off != flat.size()) throw std::invalid_argument("unflatten: too long");
  return pool;
}

void to_json(nlohmann::ordered_json& j, const ExpertPool& pool) {
  j = nlohmann::ordered_json::object();
  j["n_experts"] = pool.size();
  j["input_dim"] = pool.input_dim();
  j["hidden_dim"] = pool.hidden_dim();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : pool.experts) {
    arr.push_back(nlohmann::ordered_json{{"w1", e.w1.values()},
                                         {"b1", e.b1},
                                         {"w2", e.w2.values()},
                                         {"b2", e.b2}});
  }
  j["experts"] = std::move(arr);
}

void from_json(const nlohmann::ordered_json& j, ExpertPool& pool) {
  const auto d = j.at("input_dim").get<std::size_t>();
  const auto h = j.at("hidden_dim").get<std::size_t>();
  pool.experts.clear();
  for (const auto& e : j.at("experts")) {
    pool.experts.push_back(ExpertParams{Mat(h, d, e.at("w1").get<std::vector<double>>()),
                                        e.at("b1").get<std::vector<double>>(),
                                        Mat(d, h, e.at("w2").get<std::vector<double>>()),
                                        e.at("b2").get<std::vector<double>>()});
  }
  if (pool.size() != j.at("n_experts").get<std::size_t>()) {
    throw std::invalid_argument("ExpertPool json: n_experts does not match expert list");
  }
  pool.validate();
}

}  // namespace idamoe
