#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "fedcon/dataset.hpp"
#include "fedcon/rng.hpp"

namespace fedcon {

/// Class-conditional stand-in images: each class owns a smooth random colour
/// pattern; examples add per-pixel noise and a random brightness shift.
/// Intended for pipeline smoke runs when the real files are unavailable.
inline std::vector<LabeledExample> synthetic_examples(std::size_t count, std::size_t channels, std::size_t side,
                                                      std::size_t classes, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x5e});
  std::vector<Tensor<float>> prototypes;
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor<float> p({channels, side, side});
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double fx = uniform(rng, 0.5, 3.0), fy = uniform(rng, 0.5, 3.0);
      const double px = uniform(rng, 0, 6.3), py = uniform(rng, 0, 6.3);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          p[(ch * side + y) * side + x] = float(0.5 + 0.35 * std::sin(fx * 6.2832 * double(x) / double(side) + px) *
                                                          std::cos(fy * 6.2832 * double(y) / double(side) + py));
    }
    prototypes.push_back(std::move(p));
  }
  std::vector<LabeledExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = int(i % classes);
    Tensor<float> img = prototypes[std::size_t(label)];
    const double shift = uniform(rng, -0.1, 0.1);
    for (auto& v : img.values()) v = float(std::clamp(v + shift + uniform(rng, -0.15, 0.15), 0.0, 1.0));
    out.push_back({std::move(img), label});
  }
  shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Writes a full-size synthetic CIFAR-10 tree (five training batches and a test
/// batch) under `root/cifar-10-batches-bin`.
inline std::filesystem::path write_synthetic_cifar(const std::filesystem::path& root, std::uint64_t seed) {
  const auto d = describe(DatasetName::cifar10);
  const auto dir = root / "cifar-10-batches-bin";
  std::filesystem::create_directories(dir);
  auto all = synthetic_examples(d.train_size + d.test_size, d.channels, d.height, d.num_classes, seed);
  const std::size_t per_batch = d.train_size / 5;
  for (std::size_t b = 0; b < 5; ++b) {
    std::vector<LabeledExample> part(all.begin() + std::ptrdiff_t(b * per_batch),
                                     all.begin() + std::ptrdiff_t((b + 1) * per_batch));
    write_cifar_batch(dir / ("data_batch_" + std::to_string(b + 1) + ".bin"), part);
  }
  std::vector<LabeledExample> test(all.begin() + std::ptrdiff_t(d.train_size), all.end());
  write_cifar_batch(dir / "test_batch.bin", test);
  return dir;
}

}  // namespace fedcon
