#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "fedcon/tensor.hpp"

namespace fedcon {

/// Probability floor applied at the true class before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

template <typename T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad;  // d value / d (first argument)
};

/// Mean negative log-likelihood (1/n) sum_i -log p_i[y_i]. The gradient is with
/// respect to the probabilities.
template <typename T>
LossValue<T> cross_entropy(const Tensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw DimensionError("cross_entropy: probabilities " + shape_string(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  LossValue<T> out{0.0, Tensor<T>(probs.shape())};
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || std::size_t(y) >= c) throw DimensionError("cross_entropy: label out of range");
    const double p = std::max(double(probs[i * c + y]), kProbabilityFloor);
    out.value -= std::log(p);
    out.grad[i * c + y] = T(-1.0 / (double(n) * p));
  }
  out.value /= double(n);
  return out;
}

/// Sum of squared row differences divided by `denominator` (defaults to the row
/// count). The second argument is a constant.
template <typename T>
LossValue<T> consistency_loss(const Tensor<T>& c_online, const Tensor<T>& c_target, double denominator = 0.0) {
  require_same_shape(c_online, c_target, "consistency_loss");
  if (c_online.rank() != 2) throw DimensionError("consistency_loss: expected (batch, classes)");
  const double denom = denominator > 0.0 ? denominator : double(c_online.dim(0));
  LossValue<T> out{0.0, Tensor<T>(c_online.shape())};
  if (c_online.dim(0) == 0) return out;
  for (std::size_t i = 0; i < c_online.size(); ++i) {
    const double d = double(c_online[i]) - double(c_target[i]);
    out.value += d * d;
    out.grad[i] = T(2.0 * d / denom);
  }
  out.value /= denom;
  return out;
}

template <typename T>
struct RegressionLoss {
  double value = 0.0;
  Tensor<T> grad_online;
  Tensor<T> grad_target;  // identically zero: the target branch is a stop-gradient constant
};

/// Mean over the batch of ||z_online,i - z_target,i||^2.
template <typename T>
RegressionLoss<T> client_regression_loss(const Tensor<T>& z_online, const Tensor<T>& z_target) {
  require_same_shape(z_online, z_target, "client_regression_loss");
  if (z_online.rank() != 2) throw DimensionError("client_regression_loss: expected (batch, features)");
  RegressionLoss<T> out{0.0, Tensor<T>(z_online.shape()), Tensor<T>(z_target.shape())};
  const std::size_t n = z_online.dim(0);
  if (n == 0) return out;
  for (std::size_t i = 0; i < z_online.size(); ++i) {
    const double d = double(z_online[i]) - double(z_target[i]);
    out.value += d * d;
    out.grad_online[i] = T(2.0 * d / double(n));
  }
  out.value /= double(n);
  return out;
}

/// Rescales each row to unit l2 norm; returns the norms for the backward pass.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& z, std::vector<double>* norms = nullptr) {
  Tensor<T> out = z;
  const std::size_t n = z.dim(0), d = z.dim(1);
  if (norms) norms->assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += double(z[i * d + j]) * z[i * d + j];
    const double norm = std::max(std::sqrt(s), 1e-12);
    if (norms) (*norms)[i] = norm;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = T(z[i * d + j] / norm);
  }
  return out;
}

/// Gradient through u = z / ||z|| given dL/du and the normalized rows u.
template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& u, const std::vector<double>& norms, const Tensor<T>& grad_u) {
  Tensor<T> out(u.shape());
  const std::size_t n = u.dim(0), d = u.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0;
    for (std::size_t j = 0; j < d; ++j) dot += double(grad_u[i * d + j]) * u[i * d + j];
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = T((grad_u[i * d + j] - dot * u[i * d + j]) / norms[i]);
  }
  return out;
}

}  // namespace fedcon
