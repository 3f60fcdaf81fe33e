#pragma once

// Stochastic view generation. Every transform maps [0, 1] images to [0, 1]
// images of the same shape; channel normalization is a separate final step.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedcon/rng.hpp"
#include "fedcon/tensor.hpp"

namespace fedcon {

enum class AugmentKind { none, weak, strong };

inline std::string_view augment_kind_name(AugmentKind k) {
  switch (k) {
    case AugmentKind::none: return "none";
    case AugmentKind::weak: return "weak";
    case AugmentKind::strong: return "strong";
  }
  return "?";
}

inline AugmentKind parse_augment_kind(std::string_view s) {
  if (s == "none") return AugmentKind::none;
  if (s == "weak") return AugmentKind::weak;
  if (s == "strong") return AugmentKind::strong;
  throw std::invalid_argument("unknown augmentation policy '" + std::string(s) + "' (none, weak, strong)");
}

/// Weak: random-resized crop, flip, colour jitter, grayscale, blur, solarize.
/// Strong: crop, flip, `strong_ops` random image operations, cutout.
/// Jitter strengths, blur and solarize settings are not taken from any published
/// recipe for this model; they are the usual BYOL-family defaults.
struct AugmentPolicy {
  AugmentKind kind = AugmentKind::weak;
  double crop_scale_min = 0.6;
  double crop_scale_max = 1.0;
  double flip_probability = 0.0;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double hue = 0.1;
  double grayscale_probability = 0.2;
  double blur_probability = 0.1;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double solarize_probability = 0.1;
  double solarize_threshold = 0.5;
  std::size_t strong_ops = 2;
  double cutout_fraction = 0.5;

  void validate() const {
    auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
    };
    prob(flip_probability, "flip_probability");
    prob(grayscale_probability, "grayscale_probability");
    prob(blur_probability, "blur_probability");
    prob(solarize_probability, "solarize_probability");
    prob(cutout_fraction, "cutout_fraction");
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
      throw std::invalid_argument("crop scale range must lie within (0, 1]");
    if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5)
      throw std::invalid_argument("colour jitter strengths must be non-negative (hue at most 0.5)");
  }
};

struct ViewPair {
  Tensor<float> view1;
  Tensor<float> view2;
};

/// Per-channel mean/std applied after augmentation.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;
};

namespace aug {

inline float clamp01(double v) { return float(std::clamp(v, 0.0, 1.0)); }

inline float sample_bilinear(const float* plane, std::size_t h, std::size_t w, double y, double x, float fill) {
  if (y < -1.0 || x < -1.0 || y > double(h) || x > double(w)) return fill;
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = std::ptrdiff_t(fy), x0 = std::ptrdiff_t(fx);
  const double dy = y - fy, dx = x - fx;
  auto at = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
    if (yy < 0 || xx < 0 || yy >= std::ptrdiff_t(h) || xx >= std::ptrdiff_t(w)) return fill;
    return plane[yy * std::ptrdiff_t(w) + xx];
  };
  return float((1 - dy) * ((1 - dx) * at(y0, x0) + dx * at(y0, x0 + 1)) +
               dy * ((1 - dx) * at(y0 + 1, x0) + dx * at(y0 + 1, x0 + 1)));
}

/// Crops the box (top, left, ch, cw) and resizes it back to the full size with
/// bilinear interpolation (half-pixel centres, edge clamped).
inline Tensor<float> crop_resize(const Tensor<float>& img, double top, double left, double ch, double cw) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<float> out(img.shape());
  for (std::size_t k = 0; k < c; ++k) {
    const float* src = img.data() + k * h * w;
    float* dst = out.data() + k * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      const double sy = std::clamp(top + (double(y) + 0.5) * ch / double(h) - 0.5, 0.0, double(h - 1));
      for (std::size_t x = 0; x < w; ++x) {
        const double sx = std::clamp(left + (double(x) + 0.5) * cw / double(w) - 0.5, 0.0, double(w - 1));
        dst[y * w + x] = sample_bilinear(src, h, w, sy, sx, 0.0f);
      }
    }
  }
  return out;
}

inline Tensor<float> random_resized_crop(const Tensor<float>& img, double smin, double smax, Rng& rng) {
  const double h = double(img.dim(1)), w = double(img.dim(2));
  const double area = h * w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, smin, smax);
    const double ratio = std::exp(uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const double cw = std::round(std::sqrt(target * ratio));
    const double ch = std::round(std::sqrt(target / ratio));
    if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
      const double top = double(uniform_index(rng, std::uint64_t(h - ch) + 1));
      const double left = double(uniform_index(rng, std::uint64_t(w - cw) + 1));
      return crop_resize(img, top, left, ch, cw);
    }
  }
  return img;
}

inline void hflip(Tensor<float>& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t k = 0; k < c * h; ++k) std::reverse(img.data() + k * w, img.data() + (k + 1) * w);
}

inline std::vector<float> luminance(const Tensor<float>& img) {
  const std::size_t c = img.dim(0), hw = img.dim(1) * img.dim(2);
  std::vector<float> g(hw);
  if (c == 1) {
    std::copy(img.data(), img.data() + hw, g.begin());
  } else {
    for (std::size_t i = 0; i < hw; ++i)
      g[i] = 0.299f * img[i] + 0.587f * img[hw + i] + 0.114f * img[2 * hw + i];
  }
  return g;
}

inline void adjust_brightness(Tensor<float>& img, double f) {
  for (auto& v : img.values()) v = clamp01(v * f);
}

inline void adjust_contrast(Tensor<float>& img, double f) {
  const auto g = luminance(img);
  double mean = 0;
  for (float v : g) mean += v;
  mean /= double(g.size());
  for (auto& v : img.values()) v = clamp01((v - mean) * f + mean);
}

inline void adjust_saturation(Tensor<float>& img, double f) {
  const auto g = luminance(img);
  const std::size_t hw = g.size();
  for (std::size_t k = 0; k < img.dim(0); ++k)
    for (std::size_t i = 0; i < hw; ++i) img[k * hw + i] = clamp01((img[k * hw + i] - g[i]) * f + g[i]);
}

inline void adjust_hue(Tensor<float>& img, double shift) {
  const std::size_t hw = img.dim(1) * img.dim(2);
  for (std::size_t i = 0; i < hw; ++i) {
    const double r = img[i], g = img[hw + i], b = img[2 * hw + i];
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double v = mx, d = mx - mn;
    const double s = mx > 0 ? d / mx : 0.0;
    double hue = 0;
    if (d > 0) {
      if (mx == r) hue = std::fmod((g - b) / d, 6.0);
      else if (mx == g) hue = (b - r) / d + 2.0;
      else hue = (r - g) / d + 4.0;
      hue /= 6.0;
    }
    hue = hue + shift;
    hue -= std::floor(hue);
    const double hh = hue * 6.0;
    const double cc = v * s;
    const double xx = cc * (1 - std::abs(std::fmod(hh, 2.0) - 1));
    double rr = 0, gg = 0, bb = 0;
    switch (int(hh) % 6) {
      case 0: rr = cc; gg = xx; break;
      case 1: rr = xx; gg = cc; break;
      case 2: gg = cc; bb = xx; break;
      case 3: gg = xx; bb = cc; break;
      case 4: rr = xx; bb = cc; break;
      default: rr = cc; bb = xx; break;
    }
    const double m = v - cc;
    img[i] = clamp01(rr + m);
    img[hw + i] = clamp01(gg + m);
    img[2 * hw + i] = clamp01(bb + m);
  }
}

/// Brightness, contrast, saturation and hue in random order. Saturation and hue
/// are skipped for single-channel images.
inline void color_jitter(Tensor<float>& img, double brightness, double contrast, double saturation, double hue,
                         Rng& rng) {
  std::array<int, 4> order{0, 1, 2, 3};
  shuffle(order.begin(), order.end(), rng);
  const bool color = img.dim(0) == 3;
  for (int op : order) {
    switch (op) {
      case 0:
        if (brightness > 0) adjust_brightness(img, uniform(rng, std::max(0.0, 1 - brightness), 1 + brightness));
        break;
      case 1:
        if (contrast > 0) adjust_contrast(img, uniform(rng, std::max(0.0, 1 - contrast), 1 + contrast));
        break;
      case 2:
        if (color && saturation > 0) adjust_saturation(img, uniform(rng, std::max(0.0, 1 - saturation), 1 + saturation));
        break;
      case 3:
        if (color && hue > 0) adjust_hue(img, uniform(rng, -hue, hue));
        break;
    }
  }
}

inline void to_grayscale(Tensor<float>& img) {
  if (img.dim(0) != 3) return;
  const auto g = luminance(img);
  const std::size_t hw = g.size();
  for (std::size_t k = 0; k < 3; ++k) std::copy(g.begin(), g.end(), img.data() + k * hw);
}

/// 3x3 Gaussian blur with reflected borders.
inline void gaussian_blur(Tensor<float>& img, double sigma) {
  const double e = std::exp(-1.0 / (2 * sigma * sigma));
  const double k0 = 1.0 / (1.0 + 2 * e), k1 = e / (1.0 + 2 * e);
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  auto reflect = [](std::ptrdiff_t i, std::size_t n) -> std::size_t {
    if (n == 1) return 0;
    if (i < 0) return std::size_t(-i);
    if (i >= std::ptrdiff_t(n)) return std::size_t(2 * std::ptrdiff_t(n) - 2 - i);
    return std::size_t(i);
  };
  std::vector<float> tmp(h * w);
  for (std::size_t k = 0; k < c; ++k) {
    float* p = img.data() + k * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        tmp[y * w + x] = float(k1 * p[y * w + reflect(std::ptrdiff_t(x) - 1, w)] + k0 * p[y * w + x] +
                               k1 * p[y * w + reflect(std::ptrdiff_t(x) + 1, w)]);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        p[y * w + x] = clamp01(k1 * tmp[reflect(std::ptrdiff_t(y) - 1, h) * w + x] + k0 * tmp[y * w + x] +
                               k1 * tmp[reflect(std::ptrdiff_t(y) + 1, h) * w + x]);
  }
}

inline void solarize(Tensor<float>& img, double threshold) {
  for (auto& v : img.values())
    if (v >= threshold) v = 1.0f - v;
}

/// Inverse-mapped affine warp about the image centre; uncovered pixels become 0.
inline Tensor<float> affine(const Tensor<float>& img, double a, double b, double c, double d, double tx, double ty) {
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  const double cy = (double(h) - 1) / 2, cx = (double(w) - 1) / 2;
  Tensor<float> out(img.shape());
  for (std::size_t k = 0; k < ch; ++k) {
    const float* src = img.data() + k * h * w;
    float* dst = out.data() + k * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double ux = double(x) - cx - tx, uy = double(y) - cy - ty;
        const double sx = a * ux + b * uy + cx, sy = c * ux + d * uy + cy;
        dst[y * w + x] = clamp01(sample_bilinear(src, h, w, sy, sx, 0.0f));
      }
  }
  return out;
}

inline void autocontrast(Tensor<float>& img) {
  const std::size_t c = img.dim(0), hw = img.dim(1) * img.dim(2);
  for (std::size_t k = 0; k < c; ++k) {
    float* p = img.data() + k * hw;
    const auto [mn, mx] = std::minmax_element(p, p + hw);
    const float lo = *mn, hi = *mx;
    if (hi - lo < 1e-6f) continue;
    for (std::size_t i = 0; i < hw; ++i) p[i] = clamp01((p[i] - lo) / (hi - lo));
  }
}

inline void sharpness(Tensor<float>& img, double f) {
  Tensor<float> smooth = img;
  gaussian_blur(smooth, 1.0);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = clamp01(smooth[i] + f * (img[i] - smooth[i]));
}

inline void posterize(Tensor<float>& img, int bits) {
  const int levels = 1 << bits;
  for (auto& v : img.values()) v = float(std::floor(v * (levels - 1) + 0.5) / (levels - 1));
}

inline void cutout(Tensor<float>& img, double fraction, Rng& rng) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const auto side = std::size_t(std::round(uniform(rng, 0.0, fraction) * double(std::min(h, w))));
  if (side == 0) return;
  const std::size_t cy = uniform_index(rng, h), cx = uniform_index(rng, w);
  const std::size_t y0 = cy >= side / 2 ? cy - side / 2 : 0, x0 = cx >= side / 2 ? cx - side / 2 : 0;
  const std::size_t y1 = std::min(h, y0 + side), x1 = std::min(w, x0 + side);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) img[(k * h + y) * w + x] = 0.5f;
}

inline constexpr std::size_t kStrongOpCount = 12;

/// One RandAugment-style operation with a random magnitude.
inline void strong_op(Tensor<float>& img, std::size_t op, Rng& rng) {
  const double mag = uniform01(rng);
  const double sign = bernoulli(rng, 0.5) ? 1.0 : -1.0;
  const double size = double(img.dim(1));
  switch (op) {
    case 0: break;  // identity
    case 1: autocontrast(img); break;
    case 2: adjust_brightness(img, 1.0 + sign * 0.9 * mag); break;
    case 3: adjust_contrast(img, 1.0 + sign * 0.9 * mag); break;
    case 4: sharpness(img, 1.0 + sign * 0.9 * mag); break;
    case 5: posterize(img, 4 + int(std::floor(mag * 4.0))); break;
    case 6: solarize(img, 1.0 - mag); break;
    case 7: {
      const double t = sign * mag * 30.0 * std::numbers::pi / 180.0;
      img = affine(img, std::cos(t), std::sin(t), -std::sin(t), std::cos(t), 0, 0);
      break;
    }
    case 8: img = affine(img, 1, sign * 0.3 * mag, 0, 1, 0, 0); break;
    case 9: img = affine(img, 1, 0, sign * 0.3 * mag, 1, 0, 0); break;
    case 10: img = affine(img, 1, 0, 0, 1, sign * 0.3 * mag * size, 0); break;
    case 11: img = affine(img, 1, 0, 0, 1, 0, sign * 0.3 * mag * size); break;
    default: break;
  }
}

}  // namespace aug

/// One stochastic view of `image` (C, H, W) in [0, 1]. The NONE policy returns
/// the input unchanged.
inline Tensor<float> augment(const Tensor<float>& image, const AugmentPolicy& policy, Rng& rng) {
  if (image.rank() != 3) throw DimensionError("augment: expected a (C, H, W) image, got " + shape_string(image.shape()));
  if (policy.kind == AugmentKind::none) return image;
  Tensor<float> img = aug::random_resized_crop(image, policy.crop_scale_min, policy.crop_scale_max, rng);
  if (bernoulli(rng, policy.flip_probability)) aug::hflip(img);
  if (policy.kind == AugmentKind::weak) {
    aug::color_jitter(img, policy.brightness, policy.contrast, policy.saturation, policy.hue, rng);
    if (bernoulli(rng, policy.grayscale_probability)) aug::to_grayscale(img);
    if (bernoulli(rng, policy.blur_probability))
      aug::gaussian_blur(img, uniform(rng, policy.blur_sigma_min, policy.blur_sigma_max));
    if (bernoulli(rng, policy.solarize_probability)) aug::solarize(img, policy.solarize_threshold);
  } else {
    for (std::size_t i = 0; i < policy.strong_ops; ++i) aug::strong_op(img, uniform_index(rng, aug::kStrongOpCount), rng);
    aug::cutout(img, policy.cutout_fraction, rng);
  }
  return img;
}

/// Two independent draws from the same policy, view1 first.
inline ViewPair make_view_pair(const Tensor<float>& image, const AugmentPolicy& policy, Rng& rng) {
  ViewPair pair;
  pair.view1 = augment(image, policy, rng);
  pair.view2 = augment(image, policy, rng);
  return pair;
}

/// (x - mean_c) / std_c per channel; empty normalization is the identity.
inline void normalize_in_place(Tensor<float>& image, const Normalization& norm) {
  if (norm.mean.empty()) return;
  const std::size_t c = image.dim(0);
  if (norm.mean.size() != c || norm.std.size() != c)
    throw DimensionError("normalization has " + std::to_string(norm.mean.size()) + " channels, image has " +
                         std::to_string(c));
  const std::size_t hw = image.size() / c;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < hw; ++i) image[k * hw + i] = (image[k * hw + i] - norm.mean[k]) / norm.std[k];
}

}  // namespace fedcon
