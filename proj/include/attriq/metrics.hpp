#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriq/errors.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

// Level-grid interval partition of [0,1]. For L levels the boundaries sit
// at (2k-1)/(2L); interval k is centered on k/L. The first interval is
// [0, 1/(2L)) and the last is closed at 1 so that ground-truth level L is
// scoreable.
struct IntervalScheme {
  int level_count = 5;

  explicit IntervalScheme(int levels = 5) : level_count(levels) {
    if (levels < 1) throw ConfigError("interval scheme needs >= 1 level");
  }

  std::vector<double> boundaries() const {
    std::vector<double> b;
    for (int k = 1; k <= level_count; ++k)
      b.push_back((2.0 * k - 1.0) / (2.0 * level_count));
    return b;
  }

  // Index of the level whose interval is centered on this grid target.
  int level_of_target(double target) const {
    double scaled = target * level_count;
    int level = static_cast<int>(std::lround(scaled));
    if (level < 0 || level > level_count ||
        std::abs(scaled - level) > 1e-9)
      throw DataError("target " + std::to_string(target) +
                      " is not on the level grid with " +
                      std::to_string(level_count) + " levels");
    return level;
  }

  bool hit(double prediction, double target) const {
    int level = level_of_target(target);
    double lo = level == 0 ? 0.0 : (2.0 * level - 1.0) / (2.0 * level_count);
    double hi = level == level_count
                    ? 1.0
                    : (2.0 * level + 1.0) / (2.0 * level_count);
    if (level == level_count)
      return prediction >= lo && prediction <= hi;  // closed final interval
    return prediction >= lo && prediction < hi;
  }
};

// Fraction of (image, distortion) cells whose prediction lands in the
// interval centered on the ground-truth strength.
inline double interval_accuracy(const Tensor& predictions,
                                const Tensor& targets,
                                const IntervalScheme& scheme) {
  require_same_shape(predictions, targets, "interval_accuracy");
  if (predictions.size() == 0)
    throw DegenerateInput("interval_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (scheme.hit(predictions.data[i], targets.data[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Cell-wise RMSE with the 1/(|I||D|) normalizer.
inline double strength_rmse(const Tensor& predictions, const Tensor& targets) {
  require_same_shape(predictions, targets, "strength_rmse");
  if (predictions.size() == 0)
    throw DegenerateInput("strength_rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double d = predictions.data[i] - targets.data[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(predictions.size()));
}

// Pearson r, two-pass means, 64-bit. Degenerate variance is an error,
// never NaN.
inline double plcc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw ShapeError("plcc: length mismatch " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  std::size_t n = x.size();
  if (n < 2) throw DegenerateInput("plcc: need at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw DegenerateInput("plcc: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

// Fractional (average) ranks; tied values share the mean of their block.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

// Spearman rho: Pearson correlation of fractional ranks.
inline double srcc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw ShapeError("srcc: length mismatch " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  if (x.size() < 2) throw DegenerateInput("srcc: need at least 2 points");
  return plcc(fractional_ranks(x), fractional_ranks(y));
}

struct MetricReport {
  bool has_distortion_metrics = false;
  double accuracy = 0.0;
  double rmse = 0.0;
  bool has_score_metrics = false;
  double plcc_value = 0.0;
  double srcc_value = 0.0;
  std::size_t record_count = 0;
  std::size_t cell_count = 0;
  std::map<std::string, std::string> provenance;  // dataset/checkpoint digests

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["record_count"] = record_count;
    if (has_distortion_metrics) {
      j["accuracy"] = accuracy;
      j["rmse"] = rmse;
      j["cell_count"] = cell_count;
    }
    if (has_score_metrics) {
      j["plcc"] = plcc_value;
      j["srcc"] = srcc_value;
    }
    for (const auto& [k, v] : provenance) j[k] = v;
    return j;
  }

  std::string summary_line() const {
    std::string s = "records=" + std::to_string(record_count);
    char buf[64];
    if (has_distortion_metrics) {
      std::snprintf(buf, sizeof(buf), " accuracy=%.4f rmse=%.4f", accuracy,
                    rmse);
      s += buf;
    }
    if (has_score_metrics) {
      std::snprintf(buf, sizeof(buf), " plcc=%.4f srcc=%.4f", plcc_value,
                    srcc_value);
      s += buf;
    }
    return s;
  }
};

}  // namespace attriq
