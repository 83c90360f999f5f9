#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "attriq/errors.hpp"
#include "attriq/image.hpp"
#include "attriq/rng.hpp"

namespace attriq {

// Discrete strength grid: level k of L realizes s = k/L; level 0 means
// "not applied" and dispatch returns the input bit-identical.
struct StrengthLevel {
  int level = 0;
  int level_count = 5;

  StrengthLevel() = default;
  StrengthLevel(int lvl, int count = 5) : level(lvl), level_count(count) {
    if (count < 1 || lvl < 0 || lvl > count)
      throw ConfigError("strength level " + std::to_string(lvl) +
                        " outside {0.." + std::to_string(count) + "}");
  }

  double strength() const {
    return static_cast<double>(level) / static_cast<double>(level_count);
  }
};

enum class DistortionCategory {
  kBlur,
  kNoise,
  kColor,
  kCompression,
  kBrightnessContrast,
  kSpatial,
};

inline const char* category_name(DistortionCategory c) {
  switch (c) {
    case DistortionCategory::kBlur: return "blur";
    case DistortionCategory::kNoise: return "noise";
    case DistortionCategory::kColor: return "color";
    case DistortionCategory::kCompression: return "compression";
    case DistortionCategory::kBrightnessContrast: return "brightness-contrast";
    case DistortionCategory::kSpatial: return "spatial";
  }
  return "?";
}

struct DistortionInfo {
  std::string id;
  DistortionCategory category;
  bool stochastic;  // needs a RandomStream
  std::string param_name;
  std::string param_formula;  // human-readable s -> parameter map
  double (*param_of_strength)(double);
};

namespace kernel_detail {

// Half-sample reflect ("abcb|abcd|cba" style without edge doubling beyond
// one fold); folds repeatedly so any radius is safe on small images.
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

inline std::vector<double> gaussian_taps(double sigma) {
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    taps[i + radius] = v;
    sum += v;
  }
  for (auto& v : taps) v /= sum;
  return taps;
}

inline Image separable_blur(const Image& img, const std::vector<double>& taps) {
  int radius = static_cast<int>(taps.size() / 2);
  Image tmp = img;
  // horizontal
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += taps[k + radius] *
                 img.at(y, reflect_index(x + k, img.width), c);
        tmp.at(y, x, c) = acc;
      }
  Image out = img;
  // vertical
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += taps[k + radius] *
                 tmp.at(reflect_index(y + k, img.height), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

inline Image dense_conv(const Image& img,
                        const std::vector<std::pair<int, int>>& offsets,
                        const std::vector<double>& weights) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < offsets.size(); ++k)
          acc += weights[k] * img.at(reflect_index(y + offsets[k].first,
                                                   img.height),
                                     reflect_index(x + offsets[k].second,
                                                   img.width),
                                     c);
        out.at(y, x, c) = acc;
      }
  return out;
}

inline Image gaussian_blur(const Image& img, double s) {
  double sigma = 5.0 * s;
  if (sigma <= 0.0) return img;
  return separable_blur(img, gaussian_taps(sigma));
}

inline Image lens_blur(const Image& img, double s) {
  double radius = 8.0 * s;
  if (radius <= 0.0) return img;
  int r = static_cast<int>(std::ceil(radius));
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (static_cast<double>(dy) * dy + static_cast<double>(dx) * dx <=
          radius * radius)
        offsets.emplace_back(dy, dx);
  std::vector<double> weights(offsets.size(), 1.0 / offsets.size());
  return dense_conv(img, offsets, weights);
}

inline Image motion_blur(const Image& img, double s) {
  int half = static_cast<int>(std::lround(7.0 * s));
  if (half <= 0) return img;
  std::vector<std::pair<int, int>> offsets;
  for (int i = -half; i <= half; ++i) offsets.emplace_back(i, i);  // 45 deg
  std::vector<double> weights(offsets.size(), 1.0 / offsets.size());
  return dense_conv(img, offsets, weights);
}

inline Image white_gaussian_noise(const Image& img, double s,
                                  RandomStream& rng) {
  double sigma = 0.25 * s;
  Image out = img;
  for (auto& v : out.data) v += sigma * rng.next_gaussian();
  return out;
}

inline Image impulse_noise(const Image& img, double s, RandomStream& rng) {
  double p = 0.4 * s;
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (rng.next_unit() >= p) continue;
      double v = rng.next_unit() < 0.5 ? 0.0 : 1.0;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = v;
    }
  return out;
}

// HSV S-channel multiply expressed directly in RGB: scaling saturation by f
// while keeping hue and value maps each channel to v - f*(v - c), v = max
// channel. Identity at f=1 is bit-exact.
inline Image color_saturation_scale(const Image& img, double s) {
  double f = 1.0 - 0.8 * s;
  if (img.channels == 1) return img;  // saturation undefined on grayscale
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double v = std::max({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = v - f * (v - img.at(y, x, c));
    }
  return out;
}

inline Image brightness_shift(const Image& img, double s) {
  double delta = 0.5 * s;
  Image out = img;
  for (auto& v : out.data) v += delta;
  return out;
}

inline Image contrast_scale(const Image& img, double s) {
  double f = 1.0 - 0.8 * s;
  Image out = img;
  for (auto& v : out.data) v = 0.5 + f * (v - 0.5);
  return out;
}

// Standard luminance quantization table, scaled into the [0,1] pixel domain.
inline const std::array<std::array<double, 8>, 8>& jpeg_quant_table() {
  static const std::array<std::array<double, 8>, 8> q = {{
      {16, 11, 10, 16, 24, 40, 51, 61},
      {12, 12, 14, 19, 26, 58, 60, 55},
      {14, 13, 16, 24, 40, 57, 69, 56},
      {14, 17, 22, 29, 51, 87, 80, 62},
      {18, 22, 37, 56, 68, 109, 103, 77},
      {24, 35, 55, 64, 81, 104, 113, 92},
      {49, 64, 78, 87, 103, 121, 120, 101},
      {72, 92, 95, 98, 112, 100, 103, 99},
  }};
  return q;
}

inline const std::array<std::array<double, 8>, 8>& dct8_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> c{};
    for (int k = 0; k < 8; ++k) {
      double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n)
        c[k][n] = a * std::cos((2.0 * n + 1.0) * k * 3.14159265358979323846 /
                               16.0);
    }
    return c;
  }();
  return basis;
}

// In-process 8x8 block DCT + uniform-by-table quantization + inverse.
// Per-channel, no chroma subsampling, reflect-padded edge blocks.
inline Image jpeg_quantization(const Image& img, double s) {
  double scale = 1.0 + 19.0 * s;
  const auto& C = dct8_basis();
  const auto& Q = jpeg_quant_table();
  Image out = img;
  double block[8][8], coef[8][8], tmp[8][8];
  for (int c = 0; c < img.channels; ++c)
    for (int by = 0; by < img.height; by += 8)
      for (int bx = 0; bx < img.width; bx += 8) {
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j)
            block[i][j] = img.at(kernel_detail::reflect_index(by + i, img.height),
                                 kernel_detail::reflect_index(bx + j, img.width),
                                 c);
        // coef = C * block * C^T
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += C[i][k] * block[k][j];
            tmp[i][j] = acc;
          }
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += tmp[i][k] * C[j][k];
            double step = scale * Q[i][j] / 255.0;
            coef[i][j] = step * std::round(acc / step);
          }
        // block = C^T * coef * C
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += C[k][i] * coef[k][j];
            tmp[i][j] = acc;
          }
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += tmp[i][k] * C[k][j];
            int y = by + i, x = bx + j;
            if (y < img.height && x < img.width) out.at(y, x, c) = acc;
          }
      }
  return out;
}

inline Image pixelate(const Image& img, double s) {
  int block = 1 + static_cast<int>(std::floor(15.0 * s));
  if (block <= 1) return img;
  Image out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int by = 0; by < img.height; by += block)
      for (int bx = 0; bx < img.width; bx += block) {
        int y1 = std::min(by + block, img.height);
        int x1 = std::min(bx + block, img.width);
        double acc = 0.0;
        for (int y = by; y < y1; ++y)
          for (int x = bx; x < x1; ++x) acc += img.at(y, x, c);
        acc /= static_cast<double>((y1 - by) * (x1 - bx));
        for (int y = by; y < y1; ++y)
          for (int x = bx; x < x1; ++x) out.at(y, x, c) = acc;
      }
  return out;
}

}  // namespace kernel_detail

// Stable, documented order; the first entry is gaussian_blur.
inline const std::vector<DistortionInfo>& supported_distortions() {
  static const std::vector<DistortionInfo> table = {
      {"gaussian_blur", DistortionCategory::kBlur, false, "sigma", "5*s",
       [](double s) { return 5.0 * s; }},
      {"lens_blur", DistortionCategory::kBlur, false, "disk_radius", "8*s",
       [](double s) { return 8.0 * s; }},
      {"motion_blur", DistortionCategory::kBlur, false, "line_length",
       "2*round(7*s)+1 at 45 degrees",
       [](double s) { return 2.0 * std::lround(7.0 * s) + 1.0; }},
      {"white_gaussian_noise", DistortionCategory::kNoise, true, "noise_sigma",
       "0.25*s", [](double s) { return 0.25 * s; }},
      {"impulse_noise", DistortionCategory::kNoise, true, "replace_prob",
       "0.4*s", [](double s) { return 0.4 * s; }},
      {"color_saturation_scale", DistortionCategory::kColor, false,
       "saturation_factor", "1-0.8*s", [](double s) { return 1.0 - 0.8 * s; }},
      {"brightness_shift", DistortionCategory::kBrightnessContrast, false,
       "added_offset", "0.5*s", [](double s) { return 0.5 * s; }},
      {"contrast_scale", DistortionCategory::kBrightnessContrast, false,
       "contrast_factor", "1-0.8*s", [](double s) { return 1.0 - 0.8 * s; }},
      {"jpeg_quantization", DistortionCategory::kCompression, false,
       "quant_scale", "1+19*s", [](double s) { return 1.0 + 19.0 * s; }},
      {"pixelate", DistortionCategory::kSpatial, false, "block_size",
       "1+floor(15*s)",
       [](double s) { return 1.0 + std::floor(15.0 * s); }},
  };
  return table;
}

inline const DistortionInfo& find_distortion(const std::string& id) {
  for (const auto& info : supported_distortions())
    if (info.id == id) return info;
  throw UnknownDistortion("unknown distortion id: " + id);
}

inline bool is_known_distortion(const std::string& id) {
  for (const auto& info : supported_distortions())
    if (info.id == id) return true;
  return false;
}

// Applies one kernel at a discrete level. Pure: input untouched, output a
// new image of identical dimensions, deterministic given (img, d, level,
// rng key). Non-finite kernel output raises instead of being clamped away.
inline Image apply_distortion(const Image& img, const std::string& id,
                              StrengthLevel level,
                              RandomStream* rng = nullptr) {
  const DistortionInfo& info = find_distortion(id);
  if (level.level == 0) return img;
  if (info.stochastic && rng == nullptr)
    throw ConfigError("distortion '" + id + "' needs a random stream");
  double s = level.strength();
  Image out;
  using namespace kernel_detail;
  if (info.id == "gaussian_blur") out = gaussian_blur(img, s);
  else if (info.id == "lens_blur") out = lens_blur(img, s);
  else if (info.id == "motion_blur") out = motion_blur(img, s);
  else if (info.id == "white_gaussian_noise") out = white_gaussian_noise(img, s, *rng);
  else if (info.id == "impulse_noise") out = impulse_noise(img, s, *rng);
  else if (info.id == "color_saturation_scale") out = color_saturation_scale(img, s);
  else if (info.id == "brightness_shift") out = brightness_shift(img, s);
  else if (info.id == "contrast_scale") out = contrast_scale(img, s);
  else if (info.id == "jpeg_quantization") out = jpeg_quantization(img, s);
  else if (info.id == "pixelate") out = pixelate(img, s);
  else throw UnknownDistortion("no kernel bound for id: " + id);

  for (double v : out.data)
    if (!std::isfinite(v))
      throw KernelNumericalError("non-finite value from kernel '" + id +
                                 "' at level " + std::to_string(level.level));
  for (auto& v : out.data) v = clamp01(v);
  return out;
}

struct DistortionSpec {
  std::string id;
  StrengthLevel level;
};

// Applies kernels left-to-right; order is part of the ground truth. Each
// kernel draws from its own child stream keyed by the distortion id, so a
// kernel's randomness does not depend on its position in the sequence.
inline Image apply_sequence(const Image& img,
                            const std::vector<DistortionSpec>& specs,
                            const RandomStream* rng = nullptr) {
  if (specs.empty()) throw ConfigError("apply_sequence: empty spec list");
  std::set<std::string> seen;
  for (const auto& sp : specs)
    if (!seen.insert(sp.id).second)
      throw DuplicateDistortion("distortion '" + sp.id +
                                "' appears twice in one sequence");
  Image out = img;
  for (const auto& sp : specs) {
    const DistortionInfo& info = find_distortion(sp.id);
    if (info.stochastic && rng == nullptr)
      throw ConfigError("sequence contains stochastic kernel '" + sp.id +
                        "' but no random stream was given");
    if (info.stochastic) {
      RandomStream child = rng->child("kernel:" + sp.id);
      out = apply_distortion(out, sp.id, sp.level, &child);
    } else {
      out = apply_distortion(out, sp.id, sp.level, nullptr);
    }
  }
  return out;
}

// Human-readable reference for the level -> parameter schedules.
inline std::string schedule_table_markdown() {
  std::ostringstream os;
  os << "# Distortion parameter schedules\n\n";
  os << "Strength `s = level/5`; level 0 is the identity (kernel skipped).\n";
  os << "All kernels clamp their output to [0,1] after a finiteness check;\n";
  os << "convolutions use reflect padding.\n\n";
  os << "| id | category | parameter | schedule | L1 | L2 | L3 | L4 | L5 |\n";
  os << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& info : supported_distortions()) {
    os << "| " << info.id << " | " << category_name(info.category) << " | "
       << info.param_name << " | `" << info.param_formula << "` |";
    for (int lvl = 1; lvl <= 5; ++lvl) {
      std::ostringstream cell;
      cell.precision(3);
      cell << info.param_of_strength(lvl / 5.0);
      os << " " << cell.str() << " |";
    }
    os << "\n";
  }
  os << "\nStochastic kernels (white_gaussian_noise, impulse_noise) take a\n";
  os << "dedicated random stream; all others are deterministic functions of\n";
  os << "the input.\n";
  return os.str();
}

}  // namespace attriq
