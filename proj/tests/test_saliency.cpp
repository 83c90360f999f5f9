#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "attriq/saliency.hpp"
#include "helpers.hpp"

using namespace attriq;

namespace {

AttributeRegistry small_registry(std::size_t dim) {
  testutil::TempDir tmp("salreg");
  std::string attrs = tmp.path("attrs.json");
  {
    std::ofstream out(attrs);
    out << R"({"format":"attriq-attributes","version":1,"distortions":[
      {"distortion":"gaussian_blur","attributes":[
        {"text":"a softening of details"},{"text":"a loss of sharpness"}]},
      {"distortion":"impulse_noise","attributes":[
        {"text":"salt-and-pepper speckles"},{"text":"scattered specks"}]}
    ]})";
  }
  AttributeRegistry reg = build_registry(attrs, "toy", dim);
  reg.digest = "sal-test";
  return reg;
}

DistortionModel small_model(const AttributeRegistry& reg, std::uint64_t seed) {
  VitConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.embed_dim = 16;
  return init_distortion_model(c, reg, seed);
}

}  // namespace

TEST_CASE("saliency map dimensions and normalization", "[saliency]") {
  AttributeRegistry reg = small_registry(16);
  DistortionModel m = small_model(reg, 71);
  Image img = testutil::make_texture(16, 16, 3, 72);
  SaliencyMap sm = saliency_map(img, "gaussian_blur", m, reg);
  CHECK(sm.height == 16);
  CHECK(sm.width == 16);
  REQUIRE(sm.map.shape == std::vector<std::size_t>{16, 16});
  double mx = 0;
  for (double v : sm.map.data) {
    CHECK(v >= 0.0);
    mx = std::max(mx, v);
  }
  CHECK_FALSE(sm.zero_gradient);
  CHECK(mx == Catch::Approx(1.0).margin(1e-12));  // max-normalized

  // determinism
  SaliencyMap sm2 = saliency_map(img, "gaussian_blur", m, reg);
  CHECK(sm.map.data == sm2.map.data);

  CHECK_THROWS_AS(saliency_map(img, "no_such", m, reg), UnknownDistortion);
}

TEST_CASE("zeroed head projection yields a flagged all-zero map",
          "[saliency]") {
  AttributeRegistry reg = small_registry(16);
  DistortionModel m = small_model(reg, 73);
  m.vit.group("head.w").value = Tensor::zeros({16, 16});
  Image img = testutil::make_texture(16, 16, 3, 74);
  SaliencyMap sm = saliency_map(img, "impulse_noise", m, reg);
  CHECK(sm.zero_gradient);
  for (double v : sm.map.data) CHECK(v == 0.0);
}

TEST_CASE("input gradient matches finite differences on a 16x16 image",
          "[saliency][fd]") {
  AttributeRegistry reg = small_registry(16);
  DistortionModel m = small_model(reg, 75);
  Image img = testutil::make_texture(16, 16, 3, 76);
  std::vector<Tensor> deltas = anchor_deltas(reg);

  // analytic input gradient of P(d0 | I)
  Tape t;
  VitBinding b;
  for (const auto& g : m.vit.groups) b.vars.push_back(t.leaf(g.value, false));
  auto img_leaf = t.leaf(image_as_tensor(img), true);
  auto e = vit_forward(t, m.vit, b, img_leaf);
  auto theta_leaf = t.leaf(m.theta.value, false);
  ScoringNodes sn = score_on_tape(t, e, theta_leaf, reg, deltas);
  auto pick = std::make_shared<const std::vector<std::size_t>>(
      std::vector<std::size_t>{0});
  auto target = t.gather(sn.dist_probs, pick, {1});
  t.backward(target);
  Tensor grad = t.grad(img_leaf);

  auto prob_of = [&](const Image& im) {
    Tensor emb = encode_image(m.vit, im);
    std::vector<double> probs = attribute_probs_for_embedding(emb, reg);
    Tensor w = simplex_weights(m.theta.value);
    std::vector<double> ap = {probs[0], probs[1]};
    std::vector<double> wd = {w.at(0, 0), w.at(0, 1)};
    return distortion_prob(ap, wd);
  };

  RandomStream rng(77);
  double h = 1e-5;
  double max_rel = 0.0;
  for (int probe = 0; probe < 60; ++probe) {
    std::size_t idx = rng.next_below(img.data.size());
    Image up = img, down = img;
    up.data[idx] += h;
    down.data[idx] -= h;
    double fd = (prob_of(up) - prob_of(down)) / (2 * h);
    double ad = grad.data[idx];
    double rel =
        std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
    max_rel = std::max(max_rel, rel);
  }
  CHECK(max_rel < 1e-3);
}

TEST_CASE("overlay with an all-zero map reproduces the input", "[saliency]") {
  testutil::TempDir tmp("overlay");
  Image img = testutil::make_texture(16, 16, 3, 78);
  SaliencyMap sm;
  sm.height = 16;
  sm.width = 16;
  sm.map = Tensor::zeros({16, 16});
  sm.zero_gradient = true;
  Image out = saliency_overlay_image(img, sm, 0.6);
  CHECK(out.data == img.data);

  // round trip of the written overlay preserves dimensions
  std::string path = tmp.path("overlay.png");
  write_png(out, path);
  Image back = read_png(path);
  CHECK(back.height == 16);
  CHECK(back.width == 16);
}

TEST_CASE("heat colormap red channel is strictly monotone", "[saliency]") {
  double prev_r = -1.0;
  for (int i = 0; i <= 100; ++i) {
    double m = i / 100.0;
    double r, g, b;
    saliency_color(m, r, g, b);
    CHECK(r > prev_r);
    CHECK(g >= 0.0);
    CHECK(b >= 0.0);
    CHECK(r <= 1.0);
    prev_r = r;
  }
}

TEST_CASE("saliency csv dump parses back to the right grid", "[saliency]") {
  testutil::TempDir tmp("salcsv");
  SaliencyMap sm;
  sm.height = 3;
  sm.width = 2;
  sm.distortion = "gaussian_blur";
  sm.map = Tensor::from({3, 2}, {0.0, 0.5, 1.0, 0.25, 0.75, 0.1});
  std::string path = tmp.path("m.csv");
  write_saliency_csv(sm, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line.find("attriq-saliency") != std::string::npos);
  std::getline(in, line);
  CHECK(line.find("gaussian_blur") != std::string::npos);
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
}
