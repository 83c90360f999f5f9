#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "attriq/errors.hpp"
#include "attriq/rng.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

// Reverse-mode tape over dense double tensors. One Tape records one static
// forward pass; backward() replays the records once in reverse order.
// There is no control-flow autodiff: every step rebuilds a fresh tape.
class Tape {
 public:
  struct Var {
    std::uint32_t id = kInvalidId;
    bool valid() const { return id != kInvalidId; }
  };
  static constexpr std::uint32_t kInvalidId = 0xffffffffu;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t node_count() const { return nodes_.size(); }

  const Tensor& value(Var v) const { return node(v).value; }

  // Gradient of the last backward() w.r.t. this node. Zero tensor for
  // nodes outside the differentiated subgraph.
  Tensor grad_or_zeros(Var v) const {
    const Node& n = node(v);
    if (!n.needs_grad) return Tensor::zeros(n.value.shape);
    return n.grad;
  }

  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (!n.needs_grad)
      throw GraphStateError("grad requested for a non-tracked node");
    return n.grad;
  }

  // ---- graph construction --------------------------------------------

  Var leaf(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, {});
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_same_shape(av, bv, "add");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    return push(std::move(out), needs(a) || needs(b),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                });
  }

  Var sub(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_same_shape(av, bv, "sub");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
    return push(std::move(out), needs(a) || needs(b),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(a, g);
                  t.accumulate_scaled(b, g, -1.0);
                });
  }

  Var mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
    return push(std::move(out), needs(a) || needs(b),
                [a, b](Tape& t, const Tensor& g) {
                  const Tensor& av2 = t.value(a);
                  const Tensor& bv2 = t.value(b);
                  if (t.needs(a)) {
                    Tensor ga = g;
                    for (std::size_t i = 0; i < ga.size(); ++i)
                      ga.data[i] *= bv2.data[i];
                    t.accumulate(a, ga);
                  }
                  if (t.needs(b)) {
                    Tensor gb = g;
                    for (std::size_t i = 0; i < gb.size(); ++i)
                      gb.data[i] *= av2.data[i];
                    t.accumulate(b, gb);
                  }
                });
  }

  Var scale(Var a, double s) {
    Tensor out = value(a);
    for (auto& x : out.data) x *= s;
    return push(std::move(out), needs(a), [a, s](Tape& t, const Tensor& g) {
      t.accumulate_scaled(a, g, s);
    });
  }

  Var add_scalar(Var a, double c) {
    Tensor out = value(a);
    for (auto& x : out.data) x += c;
    return push(std::move(out), needs(a),
                [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
  }

  Var one_minus(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = 1.0 - x;
    return push(std::move(out), needs(a), [a](Tape& t, const Tensor& g) {
      t.accumulate_scaled(a, g, -1.0);
    });
  }

  // (m,n) + (n) broadcast over rows.
  Var add_rowvec(Var a, Var bias) {
    const Tensor& av = value(a);
    const Tensor& bv = value(bias);
    std::size_t n = last_dim(av);
    if (bv.size() != n)
      throw ShapeError("add_rowvec: bias " + bv.shape_str() +
                       " does not match row width of " + av.shape_str());
    Tensor out = av;
    std::size_t rows = out.size() / n;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] += bv.data[c];
    return push(std::move(out), needs(a) || needs(bias),
                [a, bias, n](Tape& t, const Tensor& g) {
                  t.accumulate(a, g);
                  if (t.needs(bias)) {
                    Tensor gb = Tensor::zeros(t.value(bias).shape);
                    std::size_t rows = g.size() / n;
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < n; ++c)
                        gb.data[c] += g.data[r * n + c];
                    t.accumulate(bias, gb);
                  }
                });
  }

  // (m,k) x (k,n) -> (m,n)
  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    check_2d(av, "matmul lhs");
    check_2d(bv, "matmul rhs");
    if (av.shape[1] != bv.shape[0])
      throw ShapeError("matmul: inner extents differ, " + av.shape_str() +
                       " vs " + bv.shape_str());
    Tensor out = mm(av, bv);
    return push(std::move(out), needs(a) || needs(b),
                [a, b](Tape& t, const Tensor& g) {
                  const Tensor& av2 = t.value(a);
                  const Tensor& bv2 = t.value(b);
                  if (t.needs(a)) t.accumulate(a, mm_nt(g, bv2));
                  if (t.needs(b)) t.accumulate(b, mm_tn(av2, g));
                });
  }

  // (m,k) x (n,k)^T -> (m,n)
  Var matmul_nt(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    check_2d(av, "matmul_nt lhs");
    check_2d(bv, "matmul_nt rhs");
    if (av.shape[1] != bv.shape[1])
      throw ShapeError("matmul_nt: inner extents differ, " + av.shape_str() +
                       " vs " + bv.shape_str());
    Tensor out = mm_nt(av, bv);
    return push(std::move(out), needs(a) || needs(b),
                [a, b](Tape& t, const Tensor& g) {
                  const Tensor& av2 = t.value(a);
                  const Tensor& bv2 = t.value(b);
                  if (t.needs(a)) t.accumulate(a, mm(g, bv2));
                  if (t.needs(b)) t.accumulate(b, mm_tn(g, av2));
                });
  }

  Var transpose(Var a) {
    const Tensor& av = value(a);
    check_2d(av, "transpose");
    std::size_t m = av.shape[0], n = av.shape[1];
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) out.at(c, r) = av.at(r, c);
    return push(std::move(out), needs(a), [a, m, n](Tape& t, const Tensor& g) {
      Tensor ga = Tensor::zeros({m, n});
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) ga.at(r, c) = g.at(c, r);
      t.accumulate(a, ga);
    });
  }

  // Inner product over all elements; shapes must hold the same count.
  Var dot(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.size() != bv.size())
      throw ShapeError("dot: element counts differ, " + av.shape_str() +
                       " vs " + bv.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av.data[i] * bv.data[i];
    return push(Tensor::scalar(s), needs(a) || needs(b),
                [a, b](Tape& t, const Tensor& g) {
                  double gs = g.data[0];
                  const Tensor& av2 = t.value(a);
                  const Tensor& bv2 = t.value(b);
                  if (t.needs(a)) {
                    Tensor ga = bv2;
                    ga.shape = av2.shape;
                    for (auto& x : ga.data) x *= gs;
                    t.accumulate(a, ga);
                  }
                  if (t.needs(b)) {
                    Tensor gb = av2;
                    gb.shape = bv2.shape;
                    for (auto& x : gb.data) x *= gs;
                    t.accumulate(b, gb);
                  }
                });
  }

  Var sum_all(Var a) {
    const Tensor& av = value(a);
    double s = 0.0;
    for (double v : av.data) s += v;
    return push(Tensor::scalar(s), needs(a), [a](Tape& t, const Tensor& g) {
      Tensor ga = Tensor::full(t.value(a).shape, g.data[0]);
      t.accumulate(a, ga);
    });
  }

  Var mean_all(Var a) {
    const Tensor& av = value(a);
    double n = static_cast<double>(av.size());
    double s = 0.0;
    for (double v : av.data) s += v;
    return push(Tensor::scalar(s / n), needs(a),
                [a, n](Tape& t, const Tensor& g) {
                  Tensor ga = Tensor::full(t.value(a).shape, g.data[0] / n);
                  t.accumulate(a, ga);
                });
  }

  // Numerically stable row softmax (max subtraction). 1-D input is one row.
  Var softmax_rows(Var a) {
    const Tensor& av = value(a);
    std::size_t n = last_dim(av);
    std::size_t rows = av.size() / n;
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = out.data.data() + r * n;
      double mx = row[0];
      for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (std::size_t c = 0; c < n; ++c) row[c] /= sum;
    }
    Var self{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(out), needs(a),
                [a, self, n](Tape& t, const Tensor& g) {
                  const Tensor& y = t.value(self);
                  Tensor ga = Tensor::zeros(y.shape);
                  std::size_t rows = y.size() / n;
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* yr = y.data.data() + r * n;
                    const double* gr = g.data.data() + r * n;
                    double dotv = 0.0;
                    for (std::size_t c = 0; c < n; ++c) dotv += yr[c] * gr[c];
                    double* out_r = ga.data.data() + r * n;
                    for (std::size_t c = 0; c < n; ++c)
                      out_r[c] = yr[c] * (gr[c] - dotv);
                  }
                  t.accumulate(a, ga);
                });
  }

  // Row layer norm with affine parameters gamma/beta of width last_dim.
  Var layernorm_rows(Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& av = value(a);
    std::size_t n = last_dim(av);
    if (value(gamma).size() != n || value(beta).size() != n)
      throw ShapeError("layernorm_rows: affine width mismatch for " +
                       av.shape_str());
    std::size_t rows = av.size() / n;
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = out.data.data() + r * n;
      double mu = 0.0;
      for (std::size_t c = 0; c < n; ++c) mu += row[c];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        double d = row[c] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);
      double inv = 1.0 / std::sqrt(var + eps);
      const double* gm = value(gamma).data.data();
      const double* bt = value(beta).data.data();
      for (std::size_t c = 0; c < n; ++c)
        row[c] = (row[c] - mu) * inv * gm[c] + bt[c];
    }
    return push(std::move(out), needs(a) || needs(gamma) || needs(beta),
                [a, gamma, beta, eps, n](Tape& t, const Tensor& g) {
                  const Tensor& x = t.value(a);
                  const Tensor& gm = t.value(gamma);
                  std::size_t rows = x.size() / n;
                  Tensor ga = Tensor::zeros(x.shape);
                  Tensor ggm = Tensor::zeros(gm.shape);
                  Tensor gbt = Tensor::zeros(gm.shape);
                  std::vector<double> xhat(n);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* xr = x.data.data() + r * n;
                    const double* gr = g.data.data() + r * n;
                    double mu = 0.0;
                    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
                    mu /= static_cast<double>(n);
                    double var = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      double d = xr[c] - mu;
                      var += d * d;
                    }
                    var /= static_cast<double>(n);
                    double inv = 1.0 / std::sqrt(var + eps);
                    double mean_gx = 0.0, mean_gxx = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      xhat[c] = (xr[c] - mu) * inv;
                      double gx = gr[c] * gm.data[c];
                      mean_gx += gx;
                      mean_gxx += gx * xhat[c];
                    }
                    mean_gx /= static_cast<double>(n);
                    mean_gxx /= static_cast<double>(n);
                    double* gar = ga.data.data() + r * n;
                    for (std::size_t c = 0; c < n; ++c) {
                      double gx = gr[c] * gm.data[c];
                      gar[c] = inv * (gx - mean_gx - xhat[c] * mean_gxx);
                      ggm.data[c] += gr[c] * xhat[c];
                      gbt.data[c] += gr[c];
                    }
                  }
                  t.accumulate(a, ga);
                  if (t.needs(gamma)) t.accumulate(gamma, ggm);
                  if (t.needs(beta)) t.accumulate(beta, gbt);
                });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = stable_logistic(x);
    Var self{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(out), needs(a),
                [a, self](Tape& t, const Tensor& g) {
                  const Tensor& y = t.value(self);
                  Tensor ga = g;
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    ga.data[i] *= y.data[i] * (1.0 - y.data[i]);
                  t.accumulate(a, ga);
                });
  }

  Var selu(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data)
      x = x > 0.0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x);
    return push(std::move(out), needs(a), [a](Tape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        double d = x.data[i] > 0.0
                       ? kSeluScale
                       : kSeluScale * kSeluAlpha * std::exp(x.data[i]);
        ga.data[i] *= d;
      }
      t.accumulate(a, ga);
    });
  }

  Var gelu(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = x * normal_cdf(x);
    return push(std::move(out), needs(a), [a](Tape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        double v = x.data[i];
        ga.data[i] *= normal_cdf(v) + v * normal_pdf(v);
      }
      t.accumulate(a, ga);
    });
  }

  // log(clamp(x, lo, hi)); zero derivative outside the clamp window.
  Var log_clamped(Var a, double lo = 1e-12, double hi = 1.0 - 1e-12) {
    Tensor out = value(a);
    for (auto& x : out.data) x = std::log(std::min(std::max(x, lo), hi));
    return push(std::move(out), needs(a), [a, lo, hi](Tape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        double v = x.data[i];
        ga.data[i] = (v > lo && v < hi) ? ga.data[i] / v : 0.0;
      }
      t.accumulate(a, ga);
    });
  }

  // Whole-tensor L2 normalization (used for embedding vectors).
  Var l2_normalize(Var a, double eps = 1e-12) {
    const Tensor& av = value(a);
    double norm = 0.0;
    for (double v : av.data) norm += v * v;
    norm = std::max(std::sqrt(norm), eps);
    Tensor out = av;
    for (auto& x : out.data) x /= norm;
    Var self{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(out), needs(a),
                [a, self, norm](Tape& t, const Tensor& g) {
                  const Tensor& y = t.value(self);
                  double yg = 0.0;
                  for (std::size_t i = 0; i < y.size(); ++i)
                    yg += y.data[i] * g.data[i];
                  Tensor ga = g;
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    ga.data[i] = (g.data[i] - y.data[i] * yg) / norm;
                  t.accumulate(a, ga);
                });
  }

  // Inverted-scaling dropout; identity in eval mode.
  Var dropout(Var a, double rate, RandomStream& rng, bool train) {
    if (!train || rate <= 0.0) return a;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const Tensor& av = value(a);
    auto mask = std::make_shared<std::vector<unsigned char>>(av.size());
    double keep = 1.0 - rate;
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
      bool kept = rng.next_unit() >= rate;
      (*mask)[i] = kept ? 1 : 0;
      out.data[i] = kept ? out.data[i] / keep : 0.0;
    }
    return push(std::move(out), needs(a),
                [a, mask, keep](Tape& t, const Tensor& g) {
                  Tensor ga = g;
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    ga.data[i] = (*mask)[i] ? ga.data[i] / keep : 0.0;
                  t.accumulate(a, ga);
                });
  }

  // Token-axis (row) concatenation.
  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::size_t n = last_dim(value(parts[0]));
    std::size_t rows = 0;
    bool any = false;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      if (last_dim(pv) != n)
        throw ShapeError("concat_rows: row width mismatch " + pv.shape_str());
      rows += pv.size() / n;
      any = any || needs(p);
    }
    Tensor out = Tensor::zeros({rows, n});
    std::size_t r = 0;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + r * n);
      r += pv.size() / n;
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    return push(std::move(out), any, [ps, n](Tape& t, const Tensor& g) {
      std::size_t r = 0;
      for (Var p : *ps) {
        const Tensor& pv = t.value(p);
        std::size_t pr = pv.size() / n;
        if (t.needs(p)) {
          Tensor gp = Tensor::zeros(pv.shape);
          std::copy(g.data.begin() + r * n, g.data.begin() + (r + pr) * n,
                    gp.data.begin());
          t.accumulate(p, gp);
        }
        r += pr;
      }
    });
  }

  Var concat_rows(Var a, Var b) { return concat_rows(std::vector<Var>{a, b}); }

  Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor& av = value(a);
    std::size_t n = last_dim(av);
    std::size_t rows = av.size() / n;
    if (r0 >= r1 || r1 > rows)
      throw ShapeError("slice_rows: [" + std::to_string(r0) + "," +
                       std::to_string(r1) + ") out of " +
                       std::to_string(rows) + " rows");
    Tensor out = Tensor::zeros({r1 - r0, n});
    std::copy(av.data.begin() + r0 * n, av.data.begin() + r1 * n,
              out.data.begin());
    return push(std::move(out), needs(a), [a, r0, n](Tape& t, const Tensor& g) {
      Tensor ga = Tensor::zeros(t.value(a).shape);
      std::copy(g.data.begin(), g.data.end(), ga.data.begin() + r0 * n);
      t.accumulate(a, ga);
    });
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& av = value(a);
    check_2d(av, "slice_cols");
    std::size_t m = av.shape[0], n = av.shape[1];
    if (c0 >= c1 || c1 > n)
      throw ShapeError("slice_cols: [" + std::to_string(c0) + "," +
                       std::to_string(c1) + ") out of " + std::to_string(n) +
                       " cols");
    std::size_t w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (std::size_t r = 0; r < m; ++r)
      std::copy(av.data.begin() + r * n + c0, av.data.begin() + r * n + c1,
                out.data.begin() + r * w);
    return push(std::move(out), needs(a),
                [a, c0, w, n](Tape& t, const Tensor& g) {
                  const Tensor& av2 = t.value(a);
                  std::size_t m = av2.shape[0];
                  Tensor ga = Tensor::zeros(av2.shape);
                  for (std::size_t r = 0; r < m; ++r)
                    std::copy(g.data.begin() + r * w,
                              g.data.begin() + (r + 1) * w,
                              ga.data.begin() + r * n + c0);
                  t.accumulate(a, ga);
                });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::size_t m = value(parts[0]).shape[0];
    std::size_t total = 0;
    bool any = false;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      check_2d(pv, "concat_cols");
      if (pv.shape[0] != m)
        throw ShapeError("concat_cols: row count mismatch " + pv.shape_str());
      total += pv.shape[1];
      any = any || needs(p);
    }
    Tensor out = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      std::size_t w = pv.shape[1];
      for (std::size_t r = 0; r < m; ++r)
        std::copy(pv.data.begin() + r * w, pv.data.begin() + (r + 1) * w,
                  out.data.begin() + r * total + off);
      off += w;
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    return push(std::move(out), any, [ps, m, total](Tape& t, const Tensor& g) {
      std::size_t off = 0;
      for (Var p : *ps) {
        const Tensor& pv = t.value(p);
        std::size_t w = pv.shape[1];
        if (t.needs(p)) {
          Tensor gp = Tensor::zeros(pv.shape);
          for (std::size_t r = 0; r < m; ++r)
            std::copy(g.data.begin() + r * total + off,
                      g.data.begin() + r * total + off + w,
                      gp.data.begin() + r * w);
          t.accumulate(p, gp);
        }
        off += w;
      }
    });
  }

  Var stack_scalars(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("stack_scalars: no inputs");
    Tensor out = Tensor::zeros({parts.size()});
    bool any = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Tensor& pv = value(parts[i]);
      if (!pv.is_scalar())
        throw ShapeError("stack_scalars: input " + std::to_string(i) +
                         " has shape " + pv.shape_str());
      out.data[i] = pv.data[0];
      any = any || needs(parts[i]);
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    return push(std::move(out), any, [ps](Tape& t, const Tensor& g) {
      for (std::size_t i = 0; i < ps->size(); ++i)
        if (t.needs((*ps)[i]))
          t.accumulate((*ps)[i], Tensor::scalar(g.data[i]));
    });
  }

  // out[i] = a.flat[index[i]]; backward scatter-adds. Indices may repeat.
  Var gather(Var a, std::shared_ptr<const std::vector<std::size_t>> index,
             std::vector<std::size_t> out_shape) {
    const Tensor& av = value(a);
    Tensor out = Tensor::zeros(out_shape);
    if (out.size() != index->size())
      throw ShapeError("gather: index count " +
                       std::to_string(index->size()) +
                       " does not fill shape " + out.shape_str());
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::size_t src = (*index)[i];
      if (src >= av.size())
        throw ShapeError("gather: index " + std::to_string(src) +
                         " out of range for " + av.shape_str());
      out.data[i] = av.data[src];
    }
    return push(std::move(out), needs(a),
                [a, index](Tape& t, const Tensor& g) {
                  Tensor ga = Tensor::zeros(t.value(a).shape);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ga.data[(*index)[i]] += g.data[i];
                  t.accumulate(a, ga);
                });
  }

  // ---- backward --------------------------------------------------------

  void backward(Var loss, double seed = 1.0) {
    if (nodes_.empty())
      throw GraphStateError("backward called with no recorded forward pass");
    if (!loss.valid() || loss.id >= nodes_.size())
      throw GraphStateError("backward called with an invalid loss node");
    if (consumed_)
      throw GraphStateError("backward already ran on this tape");
    Node& ln = nodes_[loss.id];
    if (ln.value.size() != 1)
      throw GraphStateError("backward requires a scalar loss, got shape " +
                            ln.value.shape_str());
    consumed_ = true;
    if (!ln.needs_grad) return;  // loss does not depend on any tracked leaf
    ln.grad.data[0] += seed;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && n.needs_grad) n.back(*this, n.grad);
    }
  }

  bool needs(Var v) const { return node(v).needs_grad; }

  static constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
  static constexpr double kSeluScale = 1.0507009873554804934193349852946;

  static double stable_logistic(double z) {
    if (z >= 0.0) {
      double e = std::exp(-z);
      return 1.0 / (1.0 + e);
    }
    double e = std::exp(z);
    return e / (1.0 + e);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated iff needs_grad
    bool needs_grad = false;
    std::function<void(Tape&, const Tensor&)> back;
  };

  static double normal_cdf(double x) {
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  }
  static double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) * 0.3989422804014326779;
  }

  static std::size_t last_dim(const Tensor& t) {
    if (t.shape.empty() || t.size() == 0)
      throw ShapeError("operation on empty tensor");
    return t.shape.back();
  }

  static void check_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
      throw ShapeError(std::string(op) + ": expected 2-D tensor, got " +
                       t.shape_str());
  }

  // (m,k)*(k,n), ikj loop order for contiguous access.
  static Tensor mm(const Tensor& a, const Tensor& b) {
    std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data.data() + i * k;
      double* orow = out.data.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b.data.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    return out;
  }

  // (m,k)*(n,k)^T
  static Tensor mm_nt(const Tensor& a, const Tensor& b) {
    std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data.data() + i * k;
      double* orow = out.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.data.data() + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        orow[j] = s;
      }
    }
    return out;
  }

  // (m,k)^T*(m,n) -> (k,n)
  static Tensor mm_tn(const Tensor& a, const Tensor& b) {
    std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({k, n});
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data.data() + i * k;
      const double* brow = b.data.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        double av = arow[p];
        if (av == 0.0) continue;
        double* orow = out.data.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    return out;
  }

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size())
      throw GraphStateError("invalid tape variable");
    return nodes_[v.id];
  }

  Var push(Tensor value, bool needs_grad,
           std::function<void(Tape&, const Tensor&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) {
      n.grad = Tensor::zeros(n.value.shape);
      n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
  }

  void accumulate_scaled(Var v, const Tensor& g, double s) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += s * g.data[i];
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- composite blocks ----------------------------------------------------

struct AttentionVars {
  Tape::Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Standard multi-head self-attention over tokens (T, d_model).
inline Tape::Var multi_head_attention(Tape& t, Tape::Var tokens,
                                      const AttentionVars& p,
                                      std::size_t heads) {
  const Tensor& x = t.value(tokens);
  if (x.shape.size() != 2)
    throw ShapeError("multi_head_attention: tokens must be 2-D, got " +
                     x.shape_str());
  std::size_t dm = x.shape[1];
  if (heads == 0 || dm % heads != 0)
    throw ShapeError("multi_head_attention: d_model " + std::to_string(dm) +
                     " not divisible by heads " + std::to_string(heads));
  std::size_t dh = dm / heads;
  Tape::Var q = t.add_rowvec(t.matmul(tokens, p.wq), p.bq);
  Tape::Var k = t.add_rowvec(t.matmul(tokens, p.wk), p.bk);
  Tape::Var v = t.add_rowvec(t.matmul(tokens, p.wv), p.bv);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tape::Var> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tape::Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Tape::Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    Tape::Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Tape::Var scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
    Tape::Var attn = t.softmax_rows(scores);
    head_outs.push_back(t.matmul(attn, vh));
  }
  Tape::Var merged = heads == 1 ? head_outs[0] : t.concat_cols(head_outs);
  return t.add_rowvec(t.matmul(merged, p.wo), p.bo);
}

struct MlpVars {
  Tape::Var w1, b1, w2, b2;
};

inline Tape::Var mlp_block(Tape& t, Tape::Var x, const MlpVars& p) {
  Tape::Var h = t.gelu(t.add_rowvec(t.matmul(x, p.w1), p.b1));
  return t.add_rowvec(t.matmul(h, p.w2), p.b2);
}

}  // namespace attriq
