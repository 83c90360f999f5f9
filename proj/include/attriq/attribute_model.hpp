#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "attriq/checkpoint.hpp"
#include "attriq/errors.hpp"
#include "attriq/fd_check.hpp"
#include "attriq/manifest.hpp"
#include "attriq/optim.hpp"
#include "attriq/parallel.hpp"
#include "attriq/png_io.hpp"
#include "attriq/registry.hpp"
#include "attriq/tape.hpp"
#include "attriq/vit.hpp"

namespace attriq {

// ---- pure scoring math -----------------------------------------------

// P(a|I) = exp(z+) / (exp(z+) + exp(z-)) with z = anchor . embedding,
// evaluated as a stable logistic of (z+ - z-). No embedding normalization
// and no temperature: the formula is implemented literally; see
// kNormalizedScoring for the optional stabilized variant.
inline double attribute_prob(const Tensor& e_img, const Tensor& anchor_pos,
                             const Tensor& anchor_neg) {
  if (e_img.size() != anchor_pos.size() || e_img.size() != anchor_neg.size())
    throw ShapeError("attribute_prob: dim mismatch " + e_img.shape_str() +
                     " vs " + anchor_pos.shape_str() + " / " +
                     anchor_neg.shape_str());
  double zp = 0.0, zn = 0.0;
  for (std::size_t i = 0; i < e_img.size(); ++i) {
    zp += anchor_pos.data[i] * e_img.data[i];
    zn += anchor_neg.data[i] * e_img.data[i];
  }
  if (!std::isfinite(zp) || !std::isfinite(zn))
    throw NumericalError("attribute_prob: non-finite anchor dot product");
  return Tape::stable_logistic(zp - zn);
}

// Convex combination of attribute probabilities under simplex weights.
inline double distortion_prob(const std::vector<double>& attr_probs,
                              const std::vector<double>& weights) {
  if (attr_probs.size() != weights.size() || attr_probs.empty())
    throw ShapeError("distortion_prob: " + std::to_string(attr_probs.size()) +
                     " probs vs " + std::to_string(weights.size()) +
                     " weights");
  double sum = 0.0, p = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < -1e-12)
      throw InvariantError("distortion_prob: negative weight " +
                           std::to_string(weights[i]));
    sum += weights[i];
    p += weights[i] * attr_probs[i];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw InvariantError("distortion_prob: weights sum to " +
                         std::to_string(sum) + ", not 1");
  return p;
}

// Soft-label binary cross-entropy with the 1/(|D||I|) normalizer.
// Predictions are clamped into [1e-12, 1-1e-12] inside the logs.
inline double distortion_loss(const Tensor& predictions,
                              const Tensor& targets) {
  require_same_shape(predictions, targets, "distortion_loss");
  if (predictions.size() == 0)
    throw ShapeError("distortion_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double t = targets.data[i];
    if (t < 0.0 || t > 1.0)
      throw DataError("distortion_loss: target outside [0,1]: " +
                      std::to_string(t));
    double p = std::min(std::max(predictions.data[i], 1e-12), 1.0 - 1e-12);
    acc += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return -acc / static_cast<double>(predictions.size());
}

// Zero-shot caption rule: argmax of anchor dot products, ties to the
// lowest index.
inline std::size_t infer_best_caption(const Tensor& e_img,
                                      const std::vector<Tensor>& candidates) {
  if (candidates.empty())
    throw DataError("infer_best_caption: no candidates");
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].size() != e_img.size())
      throw ShapeError("infer_best_caption: candidate " + std::to_string(i) +
                       " dim mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < e_img.size(); ++k)
      s += candidates[i].data[k] * e_img.data[k];
    if (!std::isfinite(s))
      throw NumericalError("infer_best_caption: non-finite score");
    if (i == 0 || s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

// Row softmax over raw simplex parameters theta(D, K) -> weights w(D, K).
inline Tensor simplex_weights(const Tensor& theta) {
  if (theta.shape.size() != 2)
    throw ShapeError("simplex_weights: theta must be (D, K)");
  Tensor w = theta;
  std::size_t d = theta.shape[0], k = theta.shape[1];
  for (std::size_t r = 0; r < d; ++r) {
    double mx = w.at(r, 0);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, w.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      w.at(r, c) = std::exp(w.at(r, c) - mx);
      sum += w.at(r, c);
    }
    for (std::size_t c = 0; c < k; ++c) w.at(r, c) /= sum;
  }
  return w;
}

// ---- model ------------------------------------------------------------

// Encoder plus the learnable attribute weights. Weights are realized as a
// per-distortion softmax over free parameters, so the simplex constraints
// hold after every step by construction.
struct DistortionModel {
  VitModel vit;
  ParamGroup theta;  // (|D|, attrs_per_distortion)

  std::vector<ParamGroup*> all_groups() {
    auto out = vit.all_groups();
    out.push_back(&theta);
    return out;
  }
};

inline DistortionModel init_distortion_model(const VitConfig& config,
                                             const AttributeRegistry& registry,
                                             std::uint64_t seed) {
  if (config.embed_dim != registry.dim)
    throw ConfigError("encoder embed_dim " + std::to_string(config.embed_dim) +
                      " does not match registry dim " +
                      std::to_string(registry.dim));
  DistortionModel m;
  m.vit = init_vit(config, seed);
  m.theta = ParamGroup::make(
      "simplex.theta",
      Tensor::zeros({registry.distortions.size(),
                     registry.attrs_per_distortion}));  // uniform w = 1/K
  return m;
}

// Anchor difference vectors (a+ - a-) laid out per (distortion, attribute).
inline std::vector<Tensor> anchor_deltas(const AttributeRegistry& reg) {
  std::vector<Tensor> deltas;
  deltas.reserve(reg.total_attributes());
  for (const auto& d : reg.distortions)
    for (const auto& a : d.attributes) {
      Tensor delta = a.anchor_positive;
      for (std::size_t i = 0; i < delta.size(); ++i)
        delta.data[i] -= a.anchor_negative.data[i];
      deltas.push_back(std::move(delta));
    }
  return deltas;
}

// Tape fragment for Eq-6/7 on one image embedding: returns the (D) vector
// of distortion probabilities plus the (D*K) attribute probabilities.
struct ScoringNodes {
  Tape::Var attr_probs;  // (D*K)
  Tape::Var dist_probs;  // (D)
};

inline ScoringNodes score_on_tape(Tape& t, Tape::Var embedding,
                                  Tape::Var theta_leaf,
                                  const AttributeRegistry& reg,
                                  const std::vector<Tensor>& deltas) {
  std::size_t k = reg.attrs_per_distortion;
  Tape::Var w = t.softmax_rows(theta_leaf);
  std::vector<Tape::Var> all_attr;
  std::vector<Tape::Var> dist;
  all_attr.reserve(deltas.size());
  dist.reserve(reg.distortions.size());
  for (std::size_t d = 0; d < reg.distortions.size(); ++d) {
    std::vector<Tape::Var> probs;
    probs.reserve(k);
    for (std::size_t a = 0; a < k; ++a) {
      Tape::Var z = t.dot(embedding, t.constant(deltas[d * k + a]));
      Tape::Var p = t.sigmoid(z);
      probs.push_back(p);
      all_attr.push_back(p);
    }
    Tape::Var wd = t.slice_rows(w, d, d + 1);
    dist.push_back(t.dot(t.stack_scalars(probs), wd));
  }
  return {t.stack_scalars(all_attr), t.stack_scalars(dist)};
}

// Per-image Eq-8 term: mean over distortions of the soft BCE, so averaging
// the per-image losses over a batch reproduces the 1/(|D||I|) normalizer.
inline Tape::Var bce_on_tape(Tape& t, Tape::Var dist_probs,
                             const Tensor& targets) {
  Tape::Var tgt = t.constant(targets);
  Tape::Var lp = t.log_clamped(dist_probs);
  Tape::Var lq = t.log_clamped(t.one_minus(dist_probs));
  Tape::Var term = t.add(t.mul(tgt, lp), t.mul(t.one_minus(tgt), lq));
  return t.scale(t.mean_all(term), -1.0);
}

// ---- inference over records --------------------------------------------

inline Image load_record_image(const ManifestRecord& rec,
                               const std::string& data_root,
                               const VitConfig& config) {
  namespace fs = std::filesystem;
  fs::path p = fs::path(data_root) / rec.output_path;
  Image img = read_png(p.string());
  if (img.channels == 1 && config.channels == 3) {
    Image rgb = Image::create(img.height, img.width, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = img.at(y, x, 0);
    img = std::move(rgb);
  }
  if (img.height != config.image_size || img.width != config.image_size)
    img = crop_resize(img, config.image_size);
  return img;
}

inline std::vector<double> attribute_probs_for_embedding(
    const Tensor& e, const AttributeRegistry& reg) {
  std::vector<double> out;
  out.reserve(reg.total_attributes());
  for (const auto& d : reg.distortions)
    for (const auto& a : d.attributes)
      out.push_back(attribute_prob(e, a.anchor_positive, a.anchor_negative));
  return out;
}

// Frozen-model attribute probabilities for every record: deterministic
// (#records x |D|*K) matrix in registry column order.
inline Tensor extract_attribute_probs(const std::vector<ManifestRecord>& records,
                                      const DistortionModel& model,
                                      const AttributeRegistry& reg,
                                      const std::string& data_root,
                                      std::size_t workers = 0) {
  if (model.vit.config.embed_dim != reg.dim)
    throw ConfigError("checkpoint embed_dim " +
                      std::to_string(model.vit.config.embed_dim) +
                      " does not match registry dim " +
                      std::to_string(reg.dim));
  Tensor out = Tensor::zeros({records.size(), reg.total_attributes()});
  parallel_items(records.size(), workers, [&](std::size_t i) {
    Image img = load_record_image(records[i], data_root, model.vit.config);
    Tensor e = encode_image(model.vit, img);
    std::vector<double> probs = attribute_probs_for_embedding(e, reg);
    for (std::size_t c = 0; c < probs.size(); ++c) out.at(i, c) = probs[c];
  });
  return out;
}

// Weighted distortion probabilities P(d|I) for every record.
inline Tensor predict_distortion_matrix(const std::vector<ManifestRecord>& records,
                                        const DistortionModel& model,
                                        const AttributeRegistry& reg,
                                        const std::string& data_root,
                                        std::size_t workers = 0) {
  Tensor attr = extract_attribute_probs(records, model, reg, data_root, workers);
  Tensor w = simplex_weights(model.theta.value);
  std::size_t k = reg.attrs_per_distortion;
  Tensor out = Tensor::zeros({records.size(), reg.distortions.size()});
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t d = 0; d < reg.distortions.size(); ++d) {
      std::vector<double> probs(k), weights(k);
      for (std::size_t a = 0; a < k; ++a) {
        probs[a] = attr.at(i, d * k + a);
        weights[a] = w.at(d, a);
      }
      out.at(i, d) = distortion_prob(probs, weights);
    }
  return out;
}

// ---- training -----------------------------------------------------------

struct TrainSchedule {
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 20;
  double lr_max = 0.002;
  std::size_t batch_size = 32;

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"warmup_epochs", warmup_epochs},
            {"lr_max", lr_max},
            {"batch_size", batch_size}};
  }
};

// Prompt modes follow the long cosine schedule; full fine-tuning defaults
// to the short low-rate recipe.
inline TrainSchedule default_schedule(FinetuneMode mode) {
  if (mode == FinetuneMode::kFull) return {5, 0, 5e-5, 32};
  return {100, 20, 0.002, 32};
}

struct TrainResult {
  std::vector<double> epoch_losses;
};

// Minimizes the distortion loss over the mode's trainable encoder groups
// plus the simplex parameters. Images are preloaded; batches are shuffled
// from the run seed; gradient accumulation is sharded deterministically.
inline TrainResult train_distortion_model(
    DistortionModel& model, const std::vector<ManifestRecord>& records,
    const AttributeRegistry& reg, FinetuneMode mode,
    const TrainSchedule& schedule, std::uint64_t seed,
    const std::string& data_root, std::size_t workers = 0,
    std::ostream* log = nullptr) {
  if (records.empty()) throw DataError("train: no records");
  if (schedule.epochs == 0 || schedule.batch_size == 0)
    throw ConfigError("train: epochs and batch_size must be positive");

  std::vector<std::string> dist_ids = reg.distortion_ids();
  Tensor gt = ground_truth_matrix(records, dist_ids);
  std::vector<Tensor> deltas = anchor_deltas(reg);

  std::vector<Image> images(records.size());
  parallel_items(records.size(), workers, [&](std::size_t i) {
    images[i] = load_record_image(records[i], data_root, model.vit.config);
  });

  std::vector<ParamGroup*> trainables = trainable_params(model.vit, mode);
  model.theta.trainable = true;
  trainables.push_back(&model.theta);

  AdamOptimizer adam;
  TrainResult result;
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    double lr = cosine_warmup_lr(epoch, schedule.epochs,
                                 schedule.warmup_epochs, schedule.lr_max);
    RandomStream shuffle_rng =
        RandomStream::keyed(seed, "train-shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += schedule.batch_size) {
      std::size_t stop = std::min(order.size(), start + schedule.batch_size);
      std::size_t count = stop - start;
      for (auto* g : trainables) g->zero_grad();

      constexpr std::size_t kShards = 16;
      std::size_t shards = std::min(count, kShards);
      std::vector<std::vector<Tensor>> shard_grads(
          shards, std::vector<Tensor>());
      std::vector<double> shard_loss(shards, 0.0);
      for (auto& sg : shard_grads) {
        sg.reserve(trainables.size());
        for (auto* g : trainables) sg.push_back(Tensor::zeros(g->value.shape));
      }

      parallel_shards(
          count, workers,
          [&](std::size_t b, std::size_t e, std::size_t shard) {
            for (std::size_t bi = b; bi < e; ++bi) {
              std::size_t item = order[start + bi];
              Tape t;
              VitBinding vb = bind_vit(t, model.vit);
              Tape::Var theta_leaf =
                  t.leaf(model.theta.value, model.theta.trainable);
              Tape::Var img_leaf =
                  t.leaf(image_as_tensor(images[item]), false);
              Tape::Var e_img = vit_forward(t, model.vit, vb, img_leaf);
              ScoringNodes sn =
                  score_on_tape(t, e_img, theta_leaf, reg, deltas);
              Tensor target = Tensor::zeros({dist_ids.size()});
              for (std::size_t d = 0; d < dist_ids.size(); ++d)
                target.data[d] = gt.at(item, d);
              Tape::Var loss = bce_on_tape(t, sn.dist_probs, target);
              double item_loss = t.value(loss).data[0];
              shard_loss[shard] += item_loss;
              t.backward(loss, 1.0 / static_cast<double>(count));
              for (std::size_t gi = 0; gi < trainables.size(); ++gi) {
                Tape::Var leaf = gi + 1 == trainables.size()
                                     ? theta_leaf
                                     : vb.vars[model.vit.index.at(
                                           trainables[gi]->name)];
                const Tensor& g = t.grad(leaf);
                Tensor& acc = shard_grads[shard][gi];
                for (std::size_t x = 0; x < g.size(); ++x)
                  acc.data[x] += g.data[x];
              }
            }
          },
          kShards);

      double batch_loss = 0.0;
      for (std::size_t s = 0; s < shards; ++s) {
        batch_loss += shard_loss[s];
        for (std::size_t gi = 0; gi < trainables.size(); ++gi) {
          Tensor& acc = shard_grads[s][gi];
          Tensor& dst = trainables[gi]->grad;
          for (std::size_t x = 0; x < dst.size(); ++x)
            dst.data[x] += acc.data[x];
        }
      }
      batch_loss /= static_cast<double>(count);
      if (!std::isfinite(batch_loss)) {
        std::ostringstream diag;
        diag << "NaN loss in batch starting at " << start << " of epoch "
             << epoch << "; records:";
        for (std::size_t bi = start; bi < stop && bi < start + 8; ++bi)
          diag << " " << records[order[bi]].record_id();
        throw NumericalError(diag.str());
      }
      adam.step(trainables, lr);
      epoch_loss += batch_loss * static_cast<double>(count);
      seen += count;
    }
    epoch_loss /= static_cast<double>(seen);
    result.epoch_losses.push_back(epoch_loss);
    if (log)
      (*log) << "[train-dist] epoch " << epoch << " lr " << lr << " loss "
             << epoch_loss << "\n";
  }
  return result;
}

// ---- checkpoint binding ---------------------------------------------------

inline Checkpoint distortion_model_to_checkpoint(
    const DistortionModel& model, const AttributeRegistry& reg) {
  Checkpoint ck = vit_to_checkpoint(model.vit);
  ck.tensors.emplace_back(model.theta.name, model.theta.value);
  ck.meta["registry_digest"] = reg.digest;
  ck.meta["registry_distortions"] = [&] {
    nlohmann::json j = reg.distortion_ids();
    return j.dump();
  }();
  ck.meta["attrs_per_distortion"] = std::to_string(reg.attrs_per_distortion);
  return ck;
}

inline DistortionModel distortion_model_from_checkpoint(const Checkpoint& ck) {
  DistortionModel m;
  m.vit = vit_from_checkpoint(ck);
  const Tensor* theta = ck.find("simplex.theta");
  if (!theta) throw DataError("checkpoint missing tensor 'simplex.theta'");
  m.theta = ParamGroup::make("simplex.theta", *theta);
  return m;
}

// Registry digest binding: a checkpoint may only be used with the registry
// it was trained against.
inline void require_registry_binding(const Checkpoint& ck,
                                     const AttributeRegistry& reg) {
  auto it = ck.meta.find("registry_digest");
  if (it == ck.meta.end())
    throw ConfigError("checkpoint carries no registry digest");
  if (it->second != reg.digest)
    throw ConfigError("registry digest mismatch: checkpoint bound to " +
                      it->second + ", loaded registry is " + reg.digest);
}

}  // namespace attriq
