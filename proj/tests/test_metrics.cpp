#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "attriq/metrics.hpp"
#include "attriq/rng.hpp"
#include "helpers.hpp"

using namespace attriq;

TEST_CASE("interval scheme boundaries for five levels", "[metrics]") {
  IntervalScheme scheme(5);
  std::vector<double> expect = {0.1, 0.3, 0.5, 0.7, 0.9};
  auto b = scheme.boundaries();
  REQUIRE(b.size() == 5);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(b[i] == Catch::Approx(expect[i]).margin(1e-15));
}

TEST_CASE("interval membership spot cases", "[metrics]") {
  IntervalScheme scheme(5);
  CHECK(scheme.hit(0.05, 0.0));        // [0, 0.1)
  CHECK(scheme.hit(0.29, 0.2));        // [0.1, 0.3)
  CHECK_FALSE(scheme.hit(0.31, 0.2));  // 0.31 sits in the 0.4-centered bin
  CHECK(scheme.hit(0.95, 1.0));        // [0.9, 1]
  CHECK(scheme.hit(1.0, 1.0));         // final interval closed at 1
  CHECK_FALSE(scheme.hit(0.1, 0.0));   // lower-closed boundaries
  CHECK(scheme.hit(0.1, 0.2));

  Tensor p = Tensor::from({2, 1}, {0.05, 0.62});
  Tensor t = Tensor::from({2, 1}, {0.0, 0.6});
  CHECK(interval_accuracy(p, t, scheme) == Catch::Approx(1.0));
  CHECK_THROWS_AS(
      interval_accuracy(Tensor::scalar(0.5), Tensor::scalar(0.33), scheme),
      DataError);  // target off the level grid
}

TEST_CASE("rmse basics", "[metrics]") {
  Tensor a = Tensor::from({2, 2}, {0.1, 0.2, 0.3, 0.4});
  CHECK(strength_rmse(a, a) == 0.0);
  Tensor b = a;
  for (auto& v : b.data) v += 0.1;
  CHECK(strength_rmse(b, a) == Catch::Approx(0.1).margin(1e-15));
}

TEST_CASE("plcc basics", "[metrics]") {
  std::vector<double> x = {1, 2, 3, 4};
  CHECK(plcc(x, x) == Catch::Approx(1.0).margin(1e-12));
  std::vector<double> y;
  for (double v : x) y.push_back(-2.0 * v + 3.0);
  CHECK(plcc(x, y) == Catch::Approx(-1.0).margin(1e-12));
  CHECK(plcc({1, 2, 3, 4}, {1, 3, 2, 4}) == Catch::Approx(0.8).margin(1e-12));
  CHECK_THROWS_AS(plcc({1.0}, {2.0}), DegenerateInput);
  CHECK_THROWS_AS(plcc({1, 1, 1}, {1, 2, 3}), DegenerateInput);
}

TEST_CASE("srcc basics with ties", "[metrics]") {
  // strictly increasing transform -> 1
  std::vector<double> a = {1, 2, 3, 4, 5};
  std::vector<double> b;
  for (double v : a) b.push_back(std::exp(v));
  CHECK(srcc(a, b) == Catch::Approx(1.0).margin(1e-12));

  CHECK(srcc({1, 2, 3}, {3, 2, 1}) == Catch::Approx(-1.0).margin(1e-12));

  std::vector<double> tx = {1, 2, 2, 3};
  std::vector<double> ty = {1, 2, 3, 4};
  CHECK(srcc(tx, ty) ==
        Catch::Approx(testutil::oracle_spearman(tx, ty)).margin(1e-12));
}

TEST_CASE("metrics match brute-force oracles on 100 seeded instances",
          "[metrics]") {
  RandomStream rng(404);
  for (int inst = 0; inst < 100; ++inst) {
    std::size_t n = 5 + rng.next_below(40);
    std::vector<double> x(n), y(n);
    for (auto& v : x)
      v = rng.next_unit() < 0.2 ? 0.5 : rng.next_unit();  // inject ties
    for (auto& v : y) v = rng.next_unit() < 0.2 ? 0.5 : rng.next_unit();

    CHECK(std::abs(plcc(x, y) - testutil::oracle_pearson(x, y)) <= 1e-9);
    CHECK(std::abs(srcc(x, y) - testutil::oracle_spearman(x, y)) <= 1e-9);

    Tensor px = Tensor::from({n}, std::vector<double>(x));
    Tensor py = Tensor::from({n}, std::vector<double>(y));
    CHECK(std::abs(strength_rmse(px, py) - testutil::oracle_rmse(x, y)) <=
          1e-9);

    // interval accuracy vs definitional oracle on grid targets
    int levels = 2 + static_cast<int>(rng.next_below(7));
    IntervalScheme scheme(levels);
    std::vector<double> preds(n), targets(n);
    std::size_t oracle_hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = rng.next_unit();
      targets[i] =
          static_cast<double>(rng.next_below(levels + 1)) / levels;
      if (testutil::oracle_interval_hit(preds[i], targets[i], levels))
        ++oracle_hits;
    }
    double acc = interval_accuracy(
        Tensor::from({n}, std::vector<double>(preds)),
        Tensor::from({n}, std::vector<double>(targets)), scheme);
    CHECK(acc ==
          Catch::Approx(static_cast<double>(oracle_hits) / n).margin(1e-12));
  }
}

TEST_CASE("srcc invariance under monotone maps, plcc under affine",
          "[metrics]") {
  RandomStream rng(505);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t n = 8 + rng.next_below(20);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = 4.0 * rng.next_unit() - 2.0;
    for (auto& v : y) v = 4.0 * rng.next_unit() - 2.0;
    double base_s = srcc(x, y);
    double base_p = plcc(x, y);

    // random strictly monotone map: scaled exp + cubic
    std::vector<double> xm(n);
    double a = 0.5 + rng.next_unit();
    for (std::size_t i = 0; i < n; ++i)
      xm[i] = a * x[i] * x[i] * x[i] + std::exp(0.3 * x[i]);
    CHECK(srcc(xm, y) == Catch::Approx(base_s).margin(1e-12));

    // positive affine map
    double scale = 0.1 + 3.0 * rng.next_unit();
    double shift = 10.0 * rng.next_unit() - 5.0;
    std::vector<double> xa(n);
    for (std::size_t i = 0; i < n; ++i) xa[i] = scale * x[i] + shift;
    CHECK(plcc(xa, y) == Catch::Approx(base_p).margin(1e-12));
  }
}

TEST_CASE("metric report serialization", "[metrics]") {
  MetricReport r;
  r.has_distortion_metrics = true;
  r.accuracy = 0.875;
  r.rmse = 0.043;
  r.record_count = 100;
  r.cell_count = 300;
  r.provenance["manifest_digest"] = "abc";
  nlohmann::json j = r.to_json();
  CHECK(j["accuracy"] == 0.875);
  CHECK(j["manifest_digest"] == "abc");
  CHECK(r.summary_line().find("accuracy=0.8750") != std::string::npos);
}
