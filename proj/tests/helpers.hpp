#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "attriq/image.hpp"
#include "attriq/rng.hpp"

namespace testutil {

// Scratch directory under the build tree, wiped per fixture.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    root_ = std::filesystem::temp_directory_path() /
            ("attriq_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(root_);
    std::filesystem::create_directories(root_);
  }
  ~TempDir() { std::filesystem::remove_all(root_); }
  std::string path(const std::string& rel = "") const {
    return rel.empty() ? root_.string() : (root_ / rel).string();
  }

 private:
  std::filesystem::path root_;
};

// Sharp, full-range synthetic texture: binarized sinusoid gratings plus
// random rectangles, per-channel normalized to span [0,1].
inline attriq::Image make_texture(int h, int w, int channels,
                                  std::uint64_t seed) {
  attriq::RandomStream rng(seed);
  attriq::Image img = attriq::Image::create(h, w, channels);
  double fx = 0.15 + 0.55 * rng.next_unit();
  double fy = 0.15 + 0.55 * rng.next_unit();
  double phase = 6.28318 * rng.next_unit();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = std::sin(fx * x + phase) * std::sin(fy * y - phase);
      double base = v > 0 ? 0.85 : 0.15;
      for (int c = 0; c < channels; ++c)
        img.at(y, x, c) = base * (0.7 + 0.3 * ((c + 1) / 3.0));
    }
  int rects = 3 + static_cast<int>(rng.next_below(4));
  for (int r = 0; r < rects; ++r) {
    int y0 = static_cast<int>(rng.next_below(h));
    int x0 = static_cast<int>(rng.next_below(w));
    int hh = 2 + static_cast<int>(rng.next_below(h / 2));
    int ww = 2 + static_cast<int>(rng.next_below(w / 2));
    double val = rng.next_unit();
    for (int y = y0; y < std::min(h, y0 + hh); ++y)
      for (int x = x0; x < std::min(w, x0 + ww); ++x)
        for (int c = 0; c < channels; ++c)
          img.at(y, x, c) = c == r % channels ? val : 1.0 - val;
  }
  // normalize each channel to exactly [0,1]
  for (int c = 0; c < channels; ++c) {
    double lo = 1e9, hi = -1e9;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        lo = std::min(lo, img.at(y, x, c));
        hi = std::max(hi, img.at(y, x, c));
      }
    double span = hi > lo ? hi - lo : 1.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(y, x, c) = (img.at(y, x, c) - lo) / span;
  }
  return img;
}

// Laplacian energy: sum of squared 4-neighbour Laplacian responses.
inline double laplacian_energy(const attriq::Image& img) {
  double acc = 0.0;
  for (int y = 1; y + 1 < img.height; ++y)
    for (int x = 1; x + 1 < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double v = 4.0 * img.at(y, x, c) - img.at(y - 1, x, c) -
                   img.at(y + 1, x, c) - img.at(y, x - 1, c) -
                   img.at(y, x + 1, c);
        acc += v * v;
      }
  return acc;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- definitional metric oracles (kept independent of the library) ----

inline double oracle_pearson(const std::vector<double>& x,
                             const std::vector<double>& y) {
  std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double num = 0, dx2 = 0, dy2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (x[i] - mx) * (y[i] - my);
    dx2 += (x[i] - mx) * (x[i] - mx);
    dy2 += (y[i] - my) * (y[i] - my);
  }
  return num / std::sqrt(dx2 * dy2);
}

// O(n^2) average ranks straight from the definition.
inline std::vector<double> oracle_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

inline double oracle_spearman(const std::vector<double>& x,
                              const std::vector<double>& y) {
  return oracle_pearson(oracle_ranks(x), oracle_ranks(y));
}

inline double oracle_rmse(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / a.size());
}

// Interval membership by scanning the boundary list.
inline bool oracle_interval_hit(double pred, double target, int levels) {
  int lvl = static_cast<int>(std::lround(target * levels));
  double lo = lvl == 0 ? 0.0 : (2.0 * lvl - 1) / (2.0 * levels);
  double hi = lvl == levels ? 1.0 : (2.0 * lvl + 1) / (2.0 * levels);
  return lvl == levels ? (pred >= lo && pred <= hi)
                       : (pred >= lo && pred < hi);
}

}  // namespace testutil
