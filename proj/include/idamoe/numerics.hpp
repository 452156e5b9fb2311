// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense matrices, stable reductions, the project RNG, and the central
// finite-difference oracle used by every gradient check.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

namespace idamoe {

/// Thrown when a computation produces NaN or Inf where a finite value is required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major dense matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v);
  Mat transposed() const;

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat matmul(const Mat& a, const Mat& b);
/// a * b^T
Mat matmul_nt(const Mat& a, const Mat& b);
/// a^T * b
Mat matmul_tn(const Mat& a, const Mat& b);
std::vector<double> matvec(const Mat& a, std::span<const double> x);
/// a^T * x
std::vector<double> matvec_t(const Mat& a, std::span<const double> x);

/// y += scale * x, elementwise.
void axpy(double scale, std::span<const double> x, std::span<double> y);
double dot(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> v) noexcept;
inline bool all_finite(const Mat& m) noexcept { return all_finite(m.flat()); }

std::vector<double> softmax(std::span<const double> v);
double log_sum_exp(std::span<const double> v);

/// Indices of the k largest entries, descending by value; ties go to the lower index.
std::vector<std::size_t> argtop_k(std::span<const double> v, std::size_t k);

using ScalarField = std::function<double(std::span<const double>)>;

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every coordinate.
std::vector<double> finite_diff_grad(const ScalarField& f, std::span<const double> x, double eps);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
///
/// The floor keeps entries that are zero up to roundoff from dominating the
/// ratio; gradient checks in this project use floor = 1e-3.
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-3);

/// xoshiro256** seeded through splitmix64.
///
/// The algorithm is part of the reproducibility contract: metrics files are
/// only byte-comparable across builds that keep it. Gaussian samples use the
/// Marsaglia polar method on top of uniform().
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// A generator whose stream is independent of this one; does not advance *this.
  Rng fork(std::uint64_t stream) const noexcept;

 private:
  std::uint64_t s_[4];
  std::uint64_t seed_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace idamoe
