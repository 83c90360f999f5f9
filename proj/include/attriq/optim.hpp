#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "attriq/errors.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

// A named parameter tensor with its gradient buffer. Frozen groups keep a
// zero gradient and receive zero updates.
struct ParamGroup {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  static ParamGroup make(std::string name, Tensor value, bool trainable = true) {
    ParamGroup g;
    g.name = std::move(name);
    g.grad = Tensor::zeros(value.shape);
    g.value = std::move(value);
    g.trainable = trainable;
    return g;
  }

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

inline void zero_grads(std::vector<ParamGroup*>& groups) {
  for (auto* g : groups) g->zero_grad();
}

// Linear warmup to lr_max, then cosine decay to zero. Epoch-granular.
inline double cosine_warmup_lr(std::size_t epoch, std::size_t total_epochs,
                               std::size_t warmup_epochs, double lr_max) {
  if (total_epochs == 0) return lr_max;
  if (warmup_epochs > 0 && epoch < warmup_epochs)
    return lr_max * static_cast<double>(epoch + 1) /
           static_cast<double>(warmup_epochs);
  std::size_t rest = total_epochs - warmup_epochs;
  if (rest <= 1) return lr_max;
  double t = static_cast<double>(epoch - warmup_epochs) /
             static_cast<double>(rest - 1);
  return 0.5 * lr_max * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Adaptive moment estimation with bias correction.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<ParamGroup*>& groups, double lr) {
    ++t_;
    if (moments_.size() < groups.size()) moments_.resize(groups.size());
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      ParamGroup& g = *groups[gi];
      if (!g.trainable) continue;
      Moment& mo = moments_[gi];
      if (mo.m.size() != g.value.size()) {
        mo.m = Tensor::zeros(g.value.shape);
        mo.v = Tensor::zeros(g.value.shape);
      }
      for (std::size_t i = 0; i < g.value.size(); ++i) {
        double grad = g.grad.data[i];
        mo.m.data[i] = beta1_ * mo.m.data[i] + (1.0 - beta1_) * grad;
        mo.v.data[i] = beta2_ * mo.v.data[i] + (1.0 - beta2_) * grad * grad;
        double mhat = mo.m.data[i] / bc1;
        double vhat = mo.v.data[i] / bc2;
        g.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
      // No NaN/Inf may survive an optimizer step.
      if (!g.value.all_finite())
        throw NumericalError("non-finite parameter in group '" + g.name +
                             "' after optimizer step " + std::to_string(t_));
    }
  }

 private:
  struct Moment {
    Tensor m, v;
  };
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Moment> moments_;
};

}  // namespace attriq
