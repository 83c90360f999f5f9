#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriq/checkpoint.hpp"
#include "attriq/errors.hpp"
#include "attriq/optim.hpp"
#include "attriq/parallel.hpp"
#include "attriq/rng.hpp"
#include "attriq/tape.hpp"

namespace attriq {

// Maps raw dataset scores onto [0,1]; lower-better sources are inverted so
// that 1 always means best quality. Out-of-range inputs are clamped and
// counted rather than rejected.
struct ScoreNormalizer {
  double lo = 0.0;
  double hi = 1.0;
  bool higher_better = true;
  mutable std::atomic<std::size_t> clamp_warnings{0};

  ScoreNormalizer() = default;
  ScoreNormalizer(double lo_, double hi_, bool higher_better_)
      : lo(lo_), hi(hi_), higher_better(higher_better_) {
    if (hi <= lo) throw ConfigError("score range: hi must exceed lo");
  }
  ScoreNormalizer(const ScoreNormalizer& o)
      : lo(o.lo), hi(o.hi), higher_better(o.higher_better) {
    clamp_warnings.store(o.clamp_warnings.load());
  }

  double normalize(double raw) const {
    if (raw < lo || raw > hi) {
      clamp_warnings.fetch_add(1);
      raw = std::min(hi, std::max(lo, raw));
    }
    double s = (raw - lo) / (hi - lo);
    return higher_better ? s : 1.0 - s;
  }
};

inline double normalize_score(double raw, const ScoreNormalizer& n) {
  return n.normalize(raw);
}

// Quality head: exactly two hidden layers, SELU activations, train-only
// dropout, linear output. Consumes attribute probabilities and nothing else.
struct RegressorConfig {
  std::size_t input_dim = 0;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
  double dropout = 0.2;

  void validate() const {
    if (input_dim == 0) throw ConfigError("regressor input_dim must be > 0");
    if (hidden1 == 0 || hidden2 == 0)
      throw ConfigError("regressor hidden sizes must be > 0");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("regressor dropout must be in [0,1)");
  }

  nlohmann::json to_json() const {
    return {{"input_dim", input_dim},
            {"hidden1", hidden1},
            {"hidden2", hidden2},
            {"dropout", dropout}};
  }

  static RegressorConfig from_json(const nlohmann::json& j) {
    RegressorConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden1 = j.at("hidden1").get<std::size_t>();
    c.hidden2 = j.at("hidden2").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.validate();
    return c;
  }
};

struct RegressorModel {
  RegressorConfig config;
  std::vector<ParamGroup> groups;  // w1,b1,w2,b2,w3,b3

  std::vector<ParamGroup*> all_groups() {
    std::vector<ParamGroup*> out;
    for (auto& g : groups) out.push_back(&g);
    return out;
  }
};

inline RegressorModel init_regressor(const RegressorConfig& config,
                                     std::uint64_t seed) {
  config.validate();
  RegressorModel m;
  m.config = config;
  RandomStream rng = RandomStream::keyed(seed, "regressor-init", 0);
  auto randn = [&](std::vector<std::size_t> shape, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = stddev * rng.next_gaussian();
    return t;
  };
  auto in_std = [](std::size_t fan_in) {
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
  };
  m.groups.push_back(ParamGroup::make(
      "reg.w1", randn({config.input_dim, config.hidden1},
                      in_std(config.input_dim))));
  m.groups.push_back(ParamGroup::make("reg.b1", Tensor::zeros({config.hidden1})));
  m.groups.push_back(ParamGroup::make(
      "reg.w2", randn({config.hidden1, config.hidden2}, in_std(config.hidden1))));
  m.groups.push_back(ParamGroup::make("reg.b2", Tensor::zeros({config.hidden2})));
  m.groups.push_back(ParamGroup::make(
      "reg.w3", randn({config.hidden2, 1}, in_std(config.hidden2))));
  m.groups.push_back(ParamGroup::make("reg.b3", Tensor::zeros({1})));
  return m;
}

struct RegressorBinding {
  std::vector<Tape::Var> vars;
};

inline RegressorBinding bind_regressor(Tape& t, const RegressorModel& m) {
  RegressorBinding b;
  for (const auto& g : m.groups) b.vars.push_back(t.leaf(g.value, g.trainable));
  return b;
}

inline Tape::Var regressor_forward(Tape& t, const RegressorModel& m,
                                   const RegressorBinding& b, Tape::Var x,
                                   bool train, RandomStream* rng) {
  Tape::Var h1 = t.selu(t.add_rowvec(t.matmul(x, b.vars[0]), b.vars[1]));
  if (train && m.config.dropout > 0.0) {
    if (!rng) throw ConfigError("regressor training needs a random stream");
    h1 = t.dropout(h1, m.config.dropout, *rng, true);
  }
  Tape::Var h2 = t.selu(t.add_rowvec(t.matmul(h1, b.vars[2]), b.vars[3]));
  if (train && m.config.dropout > 0.0)
    h2 = t.dropout(h2, m.config.dropout, *rng, true);
  return t.add_rowvec(t.matmul(h2, b.vars[4]), b.vars[5]);
}

struct ScorePrediction {
  double raw = 0.0;
  double clamped = 0.0;  // reporting value in [0,1]
};

// Eval-mode prediction (dropout off).
inline ScorePrediction predict_score(const RegressorModel& m,
                                     const std::vector<double>& features) {
  if (features.size() != m.config.input_dim)
    throw ConfigError("predict_score: got " +
                      std::to_string(features.size()) +
                      " features, regressor expects " +
                      std::to_string(m.config.input_dim));
  Tape t;
  RegressorBinding b;
  for (const auto& g : m.groups) b.vars.push_back(t.leaf(g.value, false));
  Tape::Var x = t.leaf(Tensor::from({1, features.size()},
                                    std::vector<double>(features)));
  Tape::Var y = regressor_forward(t, m, b, x, false, nullptr);
  ScorePrediction p;
  p.raw = t.value(y).data[0];
  p.clamped = std::min(1.0, std::max(0.0, p.raw));
  return p;
}

inline std::vector<ScorePrediction> predict_scores(const RegressorModel& m,
                                                   const Tensor& matrix,
                                                   std::size_t workers = 0) {
  if (matrix.shape.size() != 2 || matrix.shape[1] != m.config.input_dim)
    throw ConfigError("predict_scores: matrix " + matrix.shape_str() +
                      " does not match input_dim " +
                      std::to_string(m.config.input_dim));
  std::vector<ScorePrediction> out(matrix.shape[0]);
  parallel_items(matrix.shape[0], workers, [&](std::size_t i) {
    std::vector<double> row(matrix.shape[1]);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = matrix.at(i, c);
    out[i] = predict_score(m, row);
  });
  return out;
}

struct RegressorSchedule {
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 0;
  double lr_max = 1e-3;
  std::size_t batch_size = 32;
};

struct RegressorTrainResult {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
};

// MSE training with the cosine schedule; the best-validation parameter set
// is restored at the end. Upstream features come from a frozen checkpoint,
// so only the head trains here.
inline RegressorTrainResult train_regressor(
    RegressorModel& model, const Tensor& features,
    const std::vector<double>& targets,
    const std::vector<std::size_t>& train_idx,
    const std::vector<std::size_t>& val_idx,
    const RegressorSchedule& schedule, std::uint64_t seed,
    std::ostream* log = nullptr) {
  if (features.shape.size() != 2 ||
      features.shape[0] != targets.size())
    throw ShapeError("train_regressor: features " + features.shape_str() +
                     " vs " + std::to_string(targets.size()) + " targets");
  if (features.shape[1] != model.config.input_dim)
    throw ConfigError("train_regressor: input_dim mismatch: features have " +
                      std::to_string(features.shape[1]) +
                      ", model expects " +
                      std::to_string(model.config.input_dim));
  if (train_idx.empty()) throw DataError("train_regressor: empty train split");

  auto row_of = [&](std::size_t r) {
    std::vector<double> row(features.shape[1]);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = features.at(r, c);
    return row;
  };

  auto mse_over = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t r : idx) {
      double err = predict_score(model, row_of(r)).raw - targets[r];
      acc += err * err;
    }
    return acc / static_cast<double>(idx.size());
  };

  std::vector<ParamGroup*> groups = model.all_groups();
  for (auto* g : groups) g->trainable = true;
  AdamOptimizer adam;
  RegressorTrainResult result;
  std::vector<Tensor> best;
  double best_val = 0.0;
  bool have_best = false;

  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    double lr = cosine_warmup_lr(epoch, schedule.epochs,
                                 schedule.warmup_epochs, schedule.lr_max);
    RandomStream shuffle_rng = RandomStream::keyed(seed, "reg-shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    RandomStream drop_rng = RandomStream::keyed(seed, "reg-dropout", epoch);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += schedule.batch_size) {
      std::size_t stop = std::min(order.size(), start + schedule.batch_size);
      std::size_t count = stop - start;
      for (auto* g : groups) g->zero_grad();
      Tape t;
      RegressorBinding b = bind_regressor(t, model);
      std::vector<Tape::Var> losses;
      losses.reserve(count);
      for (std::size_t bi = start; bi < stop; ++bi) {
        std::size_t r = order[bi];
        Tape::Var x = t.leaf(Tensor::from({1, features.shape[1]}, row_of(r)));
        Tape::Var y = regressor_forward(t, model, b, x, true, &drop_rng);
        Tape::Var err = t.add_scalar(y, -targets[r]);
        losses.push_back(t.mul(err, err));
      }
      Tape::Var loss = t.mean_all(t.stack_scalars(losses));
      double batch_loss = t.value(loss).data[0];
      if (!std::isfinite(batch_loss))
        throw NumericalError("NaN regressor loss at epoch " +
                             std::to_string(epoch));
      t.backward(loss);
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const Tensor& g = t.grad(b.vars[gi]);
        for (std::size_t x = 0; x < g.size(); ++x)
          groups[gi]->grad.data[x] += g.data[x];
      }
      adam.step(groups, lr);
      epoch_loss += batch_loss * static_cast<double>(count);
      seen += count;
    }
    result.train_mse.push_back(epoch_loss / static_cast<double>(seen));
    double val = mse_over(val_idx);
    result.val_mse.push_back(val);
    double selector = val_idx.empty() ? result.train_mse.back() : val;
    if (!have_best || selector < best_val) {
      have_best = true;
      best_val = selector;
      result.best_epoch = epoch;
      best.clear();
      for (auto* g : groups) best.push_back(g->value);
    }
    if (log)
      (*log) << "[train-reg] epoch " << epoch << " lr " << lr << " train "
             << result.train_mse.back() << " val " << val << "\n";
  }
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    groups[gi]->value = best[gi];
  result.best_val_mse = best_val;
  return result;
}

inline Checkpoint regressor_to_checkpoint(const RegressorModel& m) {
  Checkpoint ck;
  ck.meta["regressor_config"] = m.config.to_json().dump();
  for (const auto& g : m.groups) ck.tensors.emplace_back(g.name, g.value);
  return ck;
}

inline RegressorModel regressor_from_checkpoint(const Checkpoint& ck) {
  auto it = ck.meta.find("regressor_config");
  if (it == ck.meta.end())
    throw DataError("checkpoint lacks regressor_config metadata");
  RegressorConfig config;
  try {
    config = RegressorConfig::from_json(nlohmann::json::parse(it->second));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad regressor_config metadata: ") + e.what());
  }
  RegressorModel m = init_regressor(config, 0);
  for (auto& g : m.groups) {
    const Tensor* t = ck.find(g.name);
    if (!t) throw DataError("checkpoint missing tensor '" + g.name + "'");
    if (t->shape != g.value.shape)
      throw DataError("checkpoint tensor '" + g.name + "' shape mismatch");
    g.value = *t;
  }
  return m;
}

// 80/10/10-style split by source id so no source's variants leak across
// splits. Fractions apply to the shuffled source list.
struct SourceSplit {
  std::vector<std::size_t> train, val, test;
};

inline SourceSplit split_by_source(const std::vector<std::string>& source_ids,
                                   double train_frac, double val_frac,
                                   std::uint64_t seed) {
  if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac >= 1.0 + 1e-12)
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, "
                      "train + val <= 1");
  std::vector<std::string> sources;
  {
    std::set<std::string> uniq(source_ids.begin(), source_ids.end());
    sources.assign(uniq.begin(), uniq.end());
  }
  RandomStream rng = RandomStream::keyed(seed, "source-split", 0);
  for (std::size_t i = sources.size(); i > 1; --i)
    std::swap(sources[i - 1], sources[rng.next_below(i)]);
  std::size_t n = sources.size();
  std::size_t n_train = static_cast<std::size_t>(std::floor(train_frac * n));
  std::size_t n_val = static_cast<std::size_t>(std::floor(val_frac * n));
  n_train = std::max<std::size_t>(1, std::min(n_train, n));
  std::map<std::string, int> split_of;  // 0 train, 1 val, 2 test
  for (std::size_t i = 0; i < n; ++i)
    split_of[sources[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  SourceSplit out;
  for (std::size_t r = 0; r < source_ids.size(); ++r) {
    switch (split_of[source_ids[r]]) {
      case 0: out.train.push_back(r); break;
      case 1: out.val.push_back(r); break;
      default: out.test.push_back(r); break;
    }
  }
  return out;
}

}  // namespace attriq
