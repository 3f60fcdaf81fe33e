#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedcon/augment.hpp"
#include "fedcon/dataset.hpp"
#include "fedcon/model.hpp"
#include "fedcon/server.hpp"

namespace fedcon {

/// Index of the largest entry in each row; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = scores.data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = int(best);
  }
  return out;
}

/// Top-1 accuracy of softmax(f(b(x))) over `test` in inference mode
/// (running batch-norm statistics, dropout off).
template <typename T>
double evaluate(const Architecture& arch, const ParameterSet<T>& params, std::span<const LabeledExample> test,
                std::size_t batch_size = 128, const Normalization& norm = {}) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch size must be at least 1");
  const ForwardMode mode{false, nullptr};
  std::size_t correct = 0;
  for (std::size_t off = 0; off < test.size(); off += batch_size) {
    const std::size_t end = std::min(test.size(), off + batch_size);
    std::vector<Tensor<float>> images;
    images.reserve(end - off);
    for (std::size_t i = off; i < end; ++i) {
      images.push_back(test[i].image);
      normalize_in_place(images.back(), norm);
    }
    const Tensor<T> y = forward_backbone(arch, params, to_batch<T>(images), mode);
    const auto pred = argmax_rows(forward_head(arch, params, y, mode));
    for (std::size_t i = off; i < end; ++i)
      if (pred[i - off] == test[i].label) ++correct;
  }
  return double(correct) / double(test.size());
}

struct RunAggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single run
  std::size_t runs = 0;
};

inline RunAggregate aggregate_runs(std::span<const double> values) {
  RunAggregate a;
  a.runs = values.size();
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= double(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / double(values.size() - 1));
  }
  return a;
}

}  // namespace fedcon
