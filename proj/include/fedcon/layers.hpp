#pragma once

// Layer kernels with hand-written backward passes. Activations are NCHW for
// convolutional stages and (N, features) after flattening. Parameters are looked
// up by "<layer name>.<field>" in a ParameterSet, so forward passes never mutate
// the parameters they read.

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedcon/parameters.hpp"
#include "fedcon/rng.hpp"
#include "fedcon/tensor.hpp"

namespace fedcon {

enum class LayerKind { conv2d, linear, relu, max_pool2, batch_norm, dropout, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;        // parameter prefix, empty for parameter-free layers
  std::size_t in = 0;      // input channels / features
  std::size_t out = 0;     // output channels / features
  std::size_t kernel = 0;  // square kernel size (conv2d)
  std::size_t pad = 0;     // zero padding (conv2d)
  double drop = 0.0;       // drop probability (dropout)

  static LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t pad = 0) {
    return {LayerKind::conv2d, std::move(name), in, out, k, pad, 0.0};
  }
  static LayerSpec fc(std::string name, std::size_t in, std::size_t out) {
    return {LayerKind::linear, std::move(name), in, out, 0, 0, 0.0};
  }
  static LayerSpec bn(std::string name, std::size_t channels) {
    return {LayerKind::batch_norm, std::move(name), channels, channels, 0, 0, 0.0};
  }
  static LayerSpec relu() { return {LayerKind::relu, {}, 0, 0, 0, 0, 0.0}; }
  static LayerSpec pool() { return {LayerKind::max_pool2, {}, 0, 0, 0, 0, 0.0}; }
  static LayerSpec flatten() { return {LayerKind::flatten, {}, 0, 0, 0, 0, 0.0}; }
  static LayerSpec dropout(double p) { return {LayerKind::dropout, {}, 0, 0, 0, 0, p}; }
};

using LayerStack = std::vector<LayerSpec>;

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Training mode uses batch statistics and active dropout; inference mode uses
/// running statistics and disables dropout.
struct ForwardMode {
  bool training = true;
  Rng* rng = nullptr;  // required when a dropout layer is active
};

template <typename T>
struct LayerCache {
  Tensor<T> saved;   // layer-specific: im2col matrix, relu output, normalized input, mask
  Tensor<T> extra;   // batch-norm inverse std
  std::vector<std::uint32_t> index;  // max-pool argmax
  Shape in_shape;
};

template <typename T>
struct Tape {
  std::vector<LayerCache<T>> caches;
};

/// Batch statistics observed by a training-mode batch-norm forward, to be folded
/// into running statistics after the optimizer step.
template <typename T>
struct BatchNormUpdate {
  std::string name;
  std::vector<T> mean;
  std::vector<T> var_unbiased;
};

namespace detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string pname(const std::string& layer, const char* field) { return layer + "." + field; }

struct ConvGeometry {
  std::size_t n, c, h, w, k, pad, oh, ow;
};

template <typename T>
ConvGeometry conv_geometry(const LayerSpec& spec, const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != spec.in)
    throw DimensionError(spec.name + ": expected (N, " + std::to_string(spec.in) + ", H, W) input, got " +
                         shape_string(x.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), spec.kernel, spec.pad, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw DimensionError(spec.name + ": input smaller than kernel");
  g.oh = g.h + 2 * g.pad - g.k + 1;
  g.ow = g.w + 2 * g.pad - g.k + 1;
  return g;
}

template <typename T>
Tensor<T> conv_forward(const LayerSpec& spec, const ParameterSet<T>& params, const Tensor<T>& x,
                       LayerCache<T>* cache) {
  const auto g = conv_geometry(spec, x);
  const std::size_t rows = g.c * g.k * g.k;
  const std::size_t plane = g.oh * g.ow;
  const std::size_t cols = g.n * plane;

  Tensor<T> col({rows, cols});
  T* cp = col.data();
  const T* xp = x.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        T* dst = cp + ((n * g.oh + oy) * g.ow + ox) * rows;
        for (std::size_t c = 0; c < g.c; ++c) {
          const T* src = xp + (n * g.c + c) * g.h * g.w;
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad);
              const bool inside = iy >= 0 && ix >= 0 && iy < std::ptrdiff_t(g.h) && ix < std::ptrdiff_t(g.w);
              *dst++ = inside ? src[iy * std::ptrdiff_t(g.w) + ix] : T{0};
            }
          }
        }
      }
    }
  }

  const auto& weight = params.at(pname(spec.name, "weight"));
  const auto& bias = params.at(pname(spec.name, "bias"));
  Eigen::Map<const RowMat<T>> W(weight.data(), spec.out, rows);
  Eigen::Map<const Mat<T>> C(col.data(), rows, cols);
  Mat<T> Y = W * C;

  Tensor<T> out({g.n, spec.out, g.oh, g.ow});
  T* op = out.data();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < spec.out; ++o) {
      const T b = bias[o];
      T* dst = op + (n * spec.out + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = Y(o, n * plane + p) + b;
    }

  if (cache) {
    cache->saved = std::move(col);
    cache->in_shape = x.shape();
  }
  return out;
}

template <typename T>
Tensor<T> conv_backward(const LayerSpec& spec, const ParameterSet<T>& params, const LayerCache<T>& cache,
                        const Tensor<T>& dout, ParameterSet<T>& grads, bool need_input_grad) {
  const std::size_t n_img = cache.in_shape[0], c_in = cache.in_shape[1], h = cache.in_shape[2],
                    w = cache.in_shape[3];
  const std::size_t k = spec.kernel, pad = spec.pad;
  const std::size_t oh = dout.dim(2), ow = dout.dim(3);
  const std::size_t plane = oh * ow;
  const std::size_t rows = c_in * k * k;
  const std::size_t cols = n_img * plane;

  Mat<T> dY(spec.out, cols);
  const T* dp = dout.data();
  for (std::size_t n = 0; n < n_img; ++n)
    for (std::size_t o = 0; o < spec.out; ++o) {
      const T* src = dp + (n * spec.out + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dY(o, n * plane + p) = src[p];
    }

  Eigen::Map<const Mat<T>> C(cache.saved.data(), rows, cols);
  auto& gw = grads.at(pname(spec.name, "weight"));
  auto& gb = grads.at(pname(spec.name, "bias"));
  Eigen::Map<RowMat<T>> GW(gw.data(), spec.out, rows);
  GW.noalias() += dY * C.transpose();
  // Fixed-order reduction: Eigen's vectorized sums depend on buffer alignment.
  for (std::size_t o = 0; o < spec.out; ++o) {
    double s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += double(dY(o, j));
    gb[o] += T(s);
  }

  if (!need_input_grad) return {};

  const auto& weight = params.at(pname(spec.name, "weight"));
  Eigen::Map<const RowMat<T>> W(weight.data(), spec.out, rows);
  Mat<T> dC = W.transpose() * dY;

  Tensor<T> dx(cache.in_shape);
  T* xp = dx.data();
  for (std::size_t n = 0; n < n_img; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* src = dC.data() + ((n * oh + oy) * ow + ox) * rows;
        for (std::size_t c = 0; c < c_in; ++c) {
          T* dst = xp + (n * c_in + c) * h * w;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
            for (std::size_t kx = 0; kx < k; ++kx, ++src) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
              if (iy >= 0 && ix >= 0 && iy < std::ptrdiff_t(h) && ix < std::ptrdiff_t(w))
                dst[iy * std::ptrdiff_t(w) + ix] += *src;
            }
          }
        }
      }
  return dx;
}

template <typename T>
Tensor<T> linear_forward(const LayerSpec& spec, const ParameterSet<T>& params, const Tensor<T>& x,
                         LayerCache<T>* cache) {
  if (x.rank() != 2 || x.dim(1) != spec.in)
    throw DimensionError(spec.name + ": expected (N, " + std::to_string(spec.in) + ") input, got " +
                         shape_string(x.shape()));
  const std::size_t n = x.dim(0);
  const auto& weight = params.at(pname(spec.name, "weight"));
  const auto& bias = params.at(pname(spec.name, "bias"));
  Eigen::Map<const RowMat<T>> X(x.data(), n, spec.in);
  Eigen::Map<const RowMat<T>> W(weight.data(), spec.out, spec.in);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), spec.out);
  Tensor<T> out({n, spec.out});
  Eigen::Map<RowMat<T>> Y(out.data(), n, spec.out);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += b;
  if (cache) cache->saved = x;
  return out;
}

template <typename T>
Tensor<T> linear_backward(const LayerSpec& spec, const ParameterSet<T>& params, const LayerCache<T>& cache,
                          const Tensor<T>& dout, ParameterSet<T>& grads, bool need_input_grad) {
  const std::size_t n = dout.dim(0);
  Eigen::Map<const RowMat<T>> X(cache.saved.data(), n, spec.in);
  Eigen::Map<const RowMat<T>> dY(dout.data(), n, spec.out);
  auto& gw = grads.at(pname(spec.name, "weight"));
  auto& gb = grads.at(pname(spec.name, "bias"));
  Eigen::Map<RowMat<T>> GW(gw.data(), spec.out, spec.in);
  GW.noalias() += dY.transpose() * X;
  for (std::size_t o = 0; o < spec.out; ++o) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += double(dout[i * spec.out + o]);
    gb[o] += T(s);
  }
  if (!need_input_grad) return {};
  const auto& weight = params.at(pname(spec.name, "weight"));
  Eigen::Map<const RowMat<T>> W(weight.data(), spec.out, spec.in);
  Tensor<T> dx({n, spec.in});
  Eigen::Map<RowMat<T>> dX(dx.data(), n, spec.in);
  dX.noalias() = dY * W;
  return dx;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, LayerCache<T>* cache) {
  Tensor<T> out = x;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  if (cache) cache->saved = out;
  return out;
}

template <typename T>
Tensor<T> relu_backward(const LayerCache<T>& cache, const Tensor<T>& dout) {
  Tensor<T> dx = dout;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(cache.saved[i] > T{0})) dx[i] = T{0};
  return dx;
}

template <typename T>
Tensor<T> pool_forward(const Tensor<T>& x, LayerCache<T>* cache) {
  if (x.rank() != 4) throw DimensionError("max_pool2: expected NCHW input, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({n, c, oh, ow});
  std::vector<std::uint32_t> index(out.size());
  const T* xp = x.data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = base + 2 * y * w + 2 * xx;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t q : cand)
          if (xp[q] > xp[best]) best = q;
        out[o] = xp[best];
        index[o] = static_cast<std::uint32_t>(best);
      }
  }
  if (cache) {
    cache->index = std::move(index);
    cache->in_shape = x.shape();
  }
  return out;
}

template <typename T>
Tensor<T> pool_backward(const LayerCache<T>& cache, const Tensor<T>& dout) {
  Tensor<T> dx(cache.in_shape);
  for (std::size_t i = 0; i < dout.size(); ++i) dx[cache.index[i]] += dout[i];
  return dx;
}

template <typename T>
Tensor<T> batch_norm_forward(const LayerSpec& spec, const ParameterSet<T>& params, const Tensor<T>& x,
                             const ForwardMode& mode, LayerCache<T>* cache,
                             std::vector<BatchNormUpdate<T>>* updates) {
  if (x.rank() < 2 || x.dim(1) != spec.in)
    throw DimensionError(spec.name + ": expected " + std::to_string(spec.in) + " channels, got " +
                         shape_string(x.shape()));
  const std::size_t n = x.dim(0), c = spec.in;
  const std::size_t inner = x.size() / (n * c);
  const std::size_t count = n * inner;
  const auto& gamma = params.at(pname(spec.name, "weight"));
  const auto& beta = params.at(pname(spec.name, "bias"));
  Tensor<T> out(x.shape());
  Tensor<T> inv_std({c});

  if (mode.training) {
    if (count < 2) throw DimensionError(spec.name + ": batch statistics need at least 2 values per channel");
    Tensor<T> xhat(x.shape());
    BatchNormUpdate<T> upd{spec.name, std::vector<T>(c), std::vector<T>(c)};
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) sum += p[j];
      }
      const double mean = sum / double(count);
      double sq = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) sq += (p[j] - mean) * (p[j] - mean);
      }
      const double var = sq / double(count);
      const double istd = 1.0 / std::sqrt(var + kBatchNormEps);
      inv_std[ch] = T(istd);
      upd.mean[ch] = T(mean);
      upd.var_unbiased[ch] = T(sq / double(count - 1));
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) {
          const T h = T((x[off + j] - mean) * istd);
          xhat[off + j] = h;
          out[off + j] = gamma[ch] * h + beta[ch];
        }
      }
    }
    if (updates) updates->push_back(std::move(upd));
    if (cache) cache->saved = std::move(xhat);
  } else {
    const auto& rmean = params.at(pname(spec.name, "running_mean"));
    const auto& rvar = params.at(pname(spec.name, "running_var"));
    Tensor<T> xhat(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T istd = T(1.0 / std::sqrt(double(rvar[ch]) + kBatchNormEps));
      inv_std[ch] = istd;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) {
          const T h = (x[off + j] - rmean[ch]) * istd;
          xhat[off + j] = h;
          out[off + j] = gamma[ch] * h + beta[ch];
        }
      }
    }
    if (cache) cache->saved = std::move(xhat);
  }
  if (cache) {
    cache->extra = std::move(inv_std);
    cache->in_shape = x.shape();
    cache->index = {mode.training ? 1u : 0u};
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm_backward(const LayerSpec& spec, const ParameterSet<T>& params, const LayerCache<T>& cache,
                              const Tensor<T>& dout, ParameterSet<T>& grads) {
  const std::size_t n = cache.in_shape[0], c = spec.in;
  const std::size_t inner = dout.size() / (n * c);
  const double count = double(n * inner);
  const bool training = cache.index.at(0) == 1u;
  const auto& gamma = params.at(pname(spec.name, "weight"));
  auto& gg = grads.at(pname(spec.name, "weight"));
  auto& gbeta = grads.at(pname(spec.name, "bias"));
  Tensor<T> dx(cache.in_shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        sum_dy += dout[off + j];
        sum_dy_xhat += double(dout[off + j]) * cache.saved[off + j];
      }
    }
    gg[ch] += T(sum_dy_xhat);
    gbeta[ch] += T(sum_dy);
    const double g = gamma[ch];
    const double istd = cache.extra[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        if (training) {
          dx[off + j] = T(g * istd / count *
                          (count * dout[off + j] - sum_dy - cache.saved[off + j] * sum_dy_xhat));
        } else {
          dx[off + j] = T(g * istd * dout[off + j]);
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> dropout_forward(const LayerSpec& spec, const Tensor<T>& x, const ForwardMode& mode,
                          LayerCache<T>* cache) {
  if (!mode.training || spec.drop <= 0.0) {
    if (cache) cache->saved = Tensor<T>();
    return x;
  }
  if (!mode.rng) throw std::logic_error("dropout in training mode requires an rng stream");
  const T scale = T(1.0 / (1.0 - spec.drop));
  Tensor<T> mask(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = bernoulli(*mode.rng, spec.drop) ? T{0} : scale;
    out[i] = x[i] * mask[i];
  }
  if (cache) cache->saved = std::move(mask);
  return out;
}

template <typename T>
Tensor<T> dropout_backward(const LayerCache<T>& cache, const Tensor<T>& dout) {
  if (cache.saved.empty()) return dout;
  Tensor<T> dx = dout;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= cache.saved[i];
  return dx;
}

}  // namespace detail

/// Runs `stack` on `x`. When `tape` is given, caches for backward are recorded.
template <typename T>
Tensor<T> forward(const LayerStack& stack, const ParameterSet<T>& params, Tensor<T> x, const ForwardMode& mode,
                  Tape<T>* tape = nullptr, std::vector<BatchNormUpdate<T>>* bn_updates = nullptr) {
  if (tape) {
    tape->caches.clear();
    tape->caches.resize(stack.size());
  }
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const auto& spec = stack[i];
    LayerCache<T>* cache = tape ? &tape->caches[i] : nullptr;
    switch (spec.kind) {
      case LayerKind::conv2d: x = detail::conv_forward(spec, params, x, cache); break;
      case LayerKind::linear: x = detail::linear_forward(spec, params, x, cache); break;
      case LayerKind::relu: x = detail::relu_forward(x, cache); break;
      case LayerKind::max_pool2: x = detail::pool_forward(x, cache); break;
      case LayerKind::batch_norm: x = detail::batch_norm_forward(spec, params, x, mode, cache, bn_updates); break;
      case LayerKind::dropout: x = detail::dropout_forward(spec, x, mode, cache); break;
      case LayerKind::flatten: {
        if (cache) cache->in_shape = x.shape();
        const std::size_t n = x.rank() ? x.dim(0) : 0;
        x.reshape({n, n ? x.size() / n : 0});
        break;
      }
    }
  }
  return x;
}

/// Backpropagates `dout` through a stack recorded on `tape`, accumulating weight
/// gradients into `grads`. Returns the input gradient when requested.
template <typename T>
Tensor<T> backward(const LayerStack& stack, const ParameterSet<T>& params, const Tape<T>& tape, Tensor<T> dout,
                   ParameterSet<T>& grads, bool need_input_grad = true) {
  if (tape.caches.size() != stack.size()) throw std::logic_error("backward: tape does not match layer stack");
  for (std::size_t i = stack.size(); i-- > 0;) {
    const auto& spec = stack[i];
    const auto& cache = tape.caches[i];
    const bool want_dx = need_input_grad || i > 0;
    switch (spec.kind) {
      case LayerKind::conv2d: dout = detail::conv_backward(spec, params, cache, dout, grads, want_dx); break;
      case LayerKind::linear: dout = detail::linear_backward(spec, params, cache, dout, grads, want_dx); break;
      case LayerKind::relu: dout = detail::relu_backward(cache, dout); break;
      case LayerKind::max_pool2: dout = detail::pool_backward(cache, dout); break;
      case LayerKind::batch_norm: dout = detail::batch_norm_backward(spec, params, cache, dout, grads); break;
      case LayerKind::dropout: dout = detail::dropout_backward(cache, dout); break;
      case LayerKind::flatten: dout.reshape(cache.in_shape); break;
    }
  }
  return dout;
}

/// Folds recorded batch statistics into the running-statistics buffers.
template <typename T>
void apply_batch_norm_updates(ParameterSet<T>& params, const std::vector<BatchNormUpdate<T>>& updates) {
  const T m = T(kBatchNormMomentum);
  for (const auto& u : updates) {
    auto& rm = params.at(u.name + ".running_mean");
    auto& rv = params.at(u.name + ".running_var");
    for (std::size_t c = 0; c < u.mean.size(); ++c) {
      rm[c] = (T{1} - m) * rm[c] + m * u.mean[c];
      rv[c] = (T{1} - m) * rv[c] + m * u.var_unbiased[c];
    }
  }
}

}  // namespace fedcon
