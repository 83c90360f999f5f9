#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "attriq/attribute_model.hpp"
#include "attriq/errors.hpp"
#include "attriq/image.hpp"
#include "attriq/png_io.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::string distortion;
  Tensor map;  // (H, W), max-normalized to 1 unless the gradient vanished
  bool zero_gradient = false;
};

struct SaliencyOptions {
  double smooth_sigma = 1.0;  // 0 disables smoothing
};

// |dP(d|I) / dpixel| reduced over channels by max, optionally Gaussian
// smoothed, then max-normalized. Input-gradient saliency: the minimal
// choice that exercises the image-gradient path end to end.
inline SaliencyMap saliency_map(const Image& img, const std::string& distortion,
                                const DistortionModel& model,
                                const AttributeRegistry& reg,
                                const SaliencyOptions& opt = {}) {
  const VitConfig& c = model.vit.config;
  if (img.height != c.image_size || img.width != c.image_size ||
      img.channels != c.channels)
    throw ShapeError("saliency_map: image dims do not match encoder config");
  std::size_t dist_index = 0;
  {
    bool found = false;
    const auto ids = reg.distortion_ids();
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == distortion) {
        dist_index = i;
        found = true;
        break;
      }
    if (!found)
      throw UnknownDistortion("saliency: distortion '" + distortion +
                              "' not in registry");
  }

  std::vector<Tensor> deltas = anchor_deltas(reg);
  Tape t;
  VitBinding b;
  for (const auto& g : model.vit.groups)
    b.vars.push_back(t.leaf(g.value, false));
  Tape::Var img_leaf = t.leaf(image_as_tensor(img), true);
  Tape::Var e = vit_forward(t, model.vit, b, img_leaf);
  Tape::Var theta_leaf = t.leaf(model.theta.value, false);
  ScoringNodes sn = score_on_tape(t, e, theta_leaf, reg, deltas);
  auto pick = std::make_shared<const std::vector<std::size_t>>(
      std::vector<std::size_t>{dist_index});
  Tape::Var target = t.gather(sn.dist_probs, pick, {1});
  t.backward(target);
  Tensor grad = t.grad(img_leaf);

  SaliencyMap out;
  out.height = img.height;
  out.width = img.width;
  out.distortion = distortion;
  out.map = Tensor::zeros({static_cast<std::size_t>(img.height),
                           static_cast<std::size_t>(img.width)});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double m = 0.0;
      for (int ch = 0; ch < img.channels; ++ch) {
        std::size_t idx =
            (static_cast<std::size_t>(y) * img.width + x) * img.channels + ch;
        m = std::max(m, std::abs(grad.data[idx]));
      }
      out.map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = m;
    }

  if (opt.smooth_sigma > 0.0) {
    Image tmp = Image::create(img.height, img.width, 1);
    tmp.data = out.map.data;
    tmp = kernel_detail::separable_blur(
        tmp, kernel_detail::gaussian_taps(opt.smooth_sigma));
    out.map.data = tmp.data;
  }

  double mx = 0.0;
  for (double v : out.map.data) mx = std::max(mx, v);
  if (mx <= 0.0) {
    out.zero_gradient = true;
    std::fill(out.map.data.begin(), out.map.data.end(), 0.0);
  } else {
    for (auto& v : out.map.data) v /= mx;
  }
  return out;
}

// Heat colormap with strictly increasing red channel.
inline void saliency_color(double m, double& r, double& g, double& b) {
  r = m;
  g = m * m;
  b = m * m * m * m;
}

inline Image saliency_heatmap_image(const SaliencyMap& sm) {
  Image out = Image::create(sm.height, sm.width, 3);
  for (int y = 0; y < sm.height; ++y)
    for (int x = 0; x < sm.width; ++x) {
      double r, g, b;
      saliency_color(sm.map.at(static_cast<std::size_t>(y),
                               static_cast<std::size_t>(x)),
                     r, g, b);
      out.at(y, x, 0) = r;
      out.at(y, x, 1) = g;
      out.at(y, x, 2) = b;
    }
  return out;
}

// Blend of the source image and the heat color, weighted by the map value;
// an all-zero map reproduces the input exactly.
inline Image saliency_overlay_image(const Image& img, const SaliencyMap& sm,
                                    double blend = 0.6) {
  if (img.height != sm.height || img.width != sm.width)
    throw ShapeError("saliency overlay: map dims do not match image");
  Image out = Image::create(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double m = sm.map.at(static_cast<std::size_t>(y),
                           static_cast<std::size_t>(x));
      double r, g, b;
      saliency_color(m, r, g, b);
      double w = blend * m;
      double heat[3] = {r, g, b};
      for (int c = 0; c < 3; ++c) {
        double src = img.channels == 3 ? img.at(y, x, c) : img.at(y, x, 0);
        out.at(y, x, c) = src * (1.0 - w) + heat[c] * w;
      }
    }
  return out;
}

inline void write_saliency_csv(const SaliencyMap& sm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open saliency CSV for writing: " + path);
  out << "# attriq-saliency v1\n";
  out << "# distortion=" << sm.distortion << "\n";
  for (int y = 0; y < sm.height; ++y) {
    for (int x = 0; x < sm.width; ++x) {
      if (x) out << ",";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g",
                    sm.map.at(static_cast<std::size_t>(y),
                              static_cast<std::size_t>(x)));
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace attriq
