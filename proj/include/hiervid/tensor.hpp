#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hiervid/rng.hpp"

namespace hiervid {

// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover everything
// this project needs; shape is kept generic anyway for checkpoints.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }

  static long long numel_of(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: shape entries must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    if (numel_of(t.shape) != static_cast<long long>(d.size()))
      throw std::invalid_argument("tensor: data length does not match shape");
    t.data = std::move(d);
    return t;
  }

  static Tensor randn(std::vector<int> s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = rng.normal() * stddev;
    return t;
  }

  int numel() const { return static_cast<int>(data.size()); }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const {
    if (shape.size() == 1) return shape[0];
    if (shape.size() == 2) return shape[1];
    throw std::invalid_argument("tensor: cols() needs rank 1 or 2");
  }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// A named weight: value, accumulated gradient, and the freeze flag.
// Frozen parameters still receive analytic gradients; the optimizer is
// what skips them.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool froz)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)), frozen(froz) {}

  void zero_grad() {
    for (auto& g : grad.data) g = 0.0;
  }
};

inline void check_matmul_shapes(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw std::invalid_argument("matmul: rank-2 tensors required");
  if (a.shape[1] != b.shape[0])
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                std::to_string(a.shape[1]) + " vs " + std::to_string(b.shape[0]) + ")");
}

// C = A(m x k) * B(k x n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul_shapes(a, b);
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor c(std::vector<int>{m, n});
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  for (int i = 0; i < m; ++i) {
    const double* arow = pa + static_cast<std::size_t>(i) * k;
    double* crow = pc + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A(m x k) * B(n x k)^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1])
    throw std::invalid_argument("matmul_nt: shapes incompatible");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor c(std::vector<int>{m, n});
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * k;
    double* crow = c.data.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b.data.data() + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] = s;
    }
  }
  return c;
}

constexpr double kLayerNormEps = 1e-5;

// Row-wise layer norm over the last axis; epsilon added to the population
// variance so constant rows stay finite.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.shape.empty()) throw std::invalid_argument("layer_norm: empty tensor");
  const int d = x.shape.back();
  if (gain.numel() != d || bias.numel() != d)
    throw std::invalid_argument("layer_norm: gain/bias length must match last axis");
  const int rows = x.numel() / d;
  Tensor y = x;
  for (int r = 0; r < rows; ++r) {
    double* row = y.data.data() + static_cast<std::size_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int j = 0; j < d; ++j) row[j] = (row[j] - mean) * inv * gain.at(j) + bias.at(j);
  }
  return y;
}

inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x / 1.4142135623730951));
}

inline double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / 1.4142135623730951));
  const double pdf = std::exp(-0.5 * x * x) / 2.5066282746310002;  // 1/sqrt(2*pi)
  return cdf + x * pdf;
}

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace hiervid
