#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriq/checkpoint.hpp"
#include "attriq/errors.hpp"
#include "attriq/image.hpp"
#include "attriq/optim.hpp"
#include "attriq/rng.hpp"
#include "attriq/tape.hpp"

namespace attriq {

enum class PromptMode { kNone, kShallow, kDeep };
enum class FinetuneMode { kShallow, kDeep, kFull };

inline const char* prompt_mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::kNone: return "none";
    case PromptMode::kShallow: return "shallow";
    case PromptMode::kDeep: return "deep";
  }
  return "?";
}

inline PromptMode prompt_mode_from(const std::string& s) {
  if (s == "none") return PromptMode::kNone;
  if (s == "shallow") return PromptMode::kShallow;
  if (s == "deep") return PromptMode::kDeep;
  throw ConfigError("unknown prompt mode: " + s);
}

inline const char* finetune_mode_name(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::kShallow: return "shallow";
    case FinetuneMode::kDeep: return "deep";
    case FinetuneMode::kFull: return "full";
  }
  return "?";
}

inline FinetuneMode finetune_mode_from(const std::string& s) {
  if (s == "shallow") return FinetuneMode::kShallow;
  if (s == "deep") return FinetuneMode::kDeep;
  if (s == "full") return FinetuneMode::kFull;
  throw ConfigError("unknown fine-tune mode: " + s);
}

struct VitConfig {
  int image_size = 64;  // inputs are center-cropped/resized to this square
  int patch_size = 8;
  int channels = 3;
  std::size_t d_model = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t embed_dim = 64;
  std::size_t mlp_ratio = 2;
  PromptMode prompt_mode = PromptMode::kNone;
  std::size_t prompt_len = 0;

  void validate() const {
    if (image_size < kMinImageExtent)
      throw ConfigError("image_size below minimum extent");
    if (patch_size <= 0 || image_size % patch_size != 0)
      throw ConfigError("image_size must be divisible by patch_size");
    if (channels != 1 && channels != 3)
      throw ConfigError("channels must be 1 or 3");
    if (heads == 0 || d_model % heads != 0)
      throw ConfigError("d_model must be divisible by heads");
    if (layers == 0) throw ConfigError("layers must be >= 1");
    if (embed_dim == 0 || mlp_ratio == 0)
      throw ConfigError("embed_dim and mlp_ratio must be positive");
    if (prompt_mode == PromptMode::kNone && prompt_len != 0)
      throw ConfigError("prompt_len must be 0 when prompt_mode is none");
  }

  std::size_t patches_per_side() const {
    return static_cast<std::size_t>(image_size / patch_size);
  }
  std::size_t num_patches() const {
    return patches_per_side() * patches_per_side();
  }
  // H: image tokens including the class token.
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const {
    return static_cast<std::size_t>(patch_size) * patch_size * channels;
  }
  std::size_t mlp_hidden() const { return mlp_ratio * d_model; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["image_size"] = image_size;
    j["patch_size"] = patch_size;
    j["channels"] = channels;
    j["d_model"] = d_model;
    j["layers"] = layers;
    j["heads"] = heads;
    j["embed_dim"] = embed_dim;
    j["mlp_ratio"] = mlp_ratio;
    j["prompt_mode"] = prompt_mode_name(prompt_mode);
    j["prompt_len"] = prompt_len;
    return j;
  }

  static VitConfig from_json(const nlohmann::json& j) {
    VitConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.channels = j.at("channels").get<int>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.prompt_mode = prompt_mode_from(j.at("prompt_mode").get<std::string>());
    c.prompt_len = j.at("prompt_len").get<std::size_t>();
    c.validate();
    return c;
  }
};

// Image-side encoder E_I: patchify -> +positional -> [class token] -> L
// pre-norm transformer blocks -> class-token projection to R^embed_dim.
struct VitModel {
  VitConfig config;
  std::vector<ParamGroup> groups;
  std::map<std::string, std::size_t> index;

  ParamGroup& group(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw ConfigError("unknown parameter group: " + name);
    return groups[it->second];
  }
  const ParamGroup& group(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end())
      throw ConfigError("unknown parameter group: " + name);
    return groups[it->second];
  }

  std::vector<ParamGroup*> all_groups() {
    std::vector<ParamGroup*> out;
    out.reserve(groups.size());
    for (auto& g : groups) out.push_back(&g);
    return out;
  }
};

namespace vit_detail {

inline Tensor randn(std::vector<std::size_t> shape, double stddev,
                    RandomStream& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = stddev * rng.next_gaussian();
  return t;
}

inline void add_group(VitModel& m, const std::string& name, Tensor value) {
  m.index[name] = m.groups.size();
  m.groups.push_back(ParamGroup::make(name, std::move(value)));
}

}  // namespace vit_detail

inline VitModel init_vit(const VitConfig& config, std::uint64_t seed) {
  config.validate();
  using vit_detail::add_group;
  using vit_detail::randn;
  VitModel m;
  m.config = config;
  RandomStream rng = RandomStream::keyed(seed, "vit-init", 0);
  std::size_t dm = config.d_model;
  double dm_std = 1.0 / std::sqrt(static_cast<double>(dm));
  add_group(m, "patch_proj.w",
            randn({config.patch_dim(), dm},
                  1.0 / std::sqrt(static_cast<double>(config.patch_dim())),
                  rng));
  add_group(m, "patch_proj.b", Tensor::zeros({dm}));
  add_group(m, "pos_embed", randn({config.num_tokens(), dm}, 0.02, rng));
  add_group(m, "cls_token", randn({1, dm}, 0.02, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    add_group(m, p + "ln1.g", Tensor::full({dm}, 1.0));
    add_group(m, p + "ln1.b", Tensor::zeros({dm}));
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      add_group(m, p + w, randn({dm, dm}, dm_std, rng));
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      add_group(m, p + b, Tensor::zeros({dm}));
    add_group(m, p + "ln2.g", Tensor::full({dm}, 1.0));
    add_group(m, p + "ln2.b", Tensor::zeros({dm}));
    add_group(m, p + "mlp.w1", randn({dm, config.mlp_hidden()}, dm_std, rng));
    add_group(m, p + "mlp.b1", Tensor::zeros({config.mlp_hidden()}));
    add_group(m, p + "mlp.w2",
              randn({config.mlp_hidden(), dm},
                    1.0 / std::sqrt(static_cast<double>(config.mlp_hidden())),
                    rng));
    add_group(m, p + "mlp.b2", Tensor::zeros({dm}));
  }
  add_group(m, "final_ln.g", Tensor::full({dm}, 1.0));
  add_group(m, "final_ln.b", Tensor::zeros({dm}));
  add_group(m, "head.w", randn({dm, config.embed_dim}, dm_std, rng));
  if (config.prompt_mode == PromptMode::kShallow && config.prompt_len > 0)
    add_group(m, "prompt.shallow", randn({config.prompt_len, dm}, 0.02, rng));
  if (config.prompt_mode == PromptMode::kDeep && config.prompt_len > 0)
    for (std::size_t l = 0; l < config.layers; ++l)
      add_group(m, "prompt.deep" + std::to_string(l),
                randn({config.prompt_len, dm}, 0.02, rng));
  return m;
}

// Marks trainable flags for the requested fine-tune mode and returns the
// trainable groups. Text anchors live in the registry and are frozen by
// construction; they never appear here.
inline std::vector<ParamGroup*> trainable_params(VitModel& m,
                                                 FinetuneMode mode) {
  std::vector<ParamGroup*> out;
  if (mode == FinetuneMode::kShallow &&
      (m.config.prompt_mode != PromptMode::kShallow || m.config.prompt_len == 0))
    throw ConfigError("shallow fine-tune requires prompt_mode=shallow with "
                      "prompt_len > 0");
  if (mode == FinetuneMode::kDeep &&
      (m.config.prompt_mode != PromptMode::kDeep || m.config.prompt_len == 0))
    throw ConfigError("deep fine-tune requires prompt_mode=deep with "
                      "prompt_len > 0");
  for (auto& g : m.groups) {
    bool is_prompt = g.name.rfind("prompt.", 0) == 0;
    bool trainable = false;
    switch (mode) {
      case FinetuneMode::kShallow:
      case FinetuneMode::kDeep:
        trainable = is_prompt;
        break;
      case FinetuneMode::kFull:
        trainable = true;
        break;
    }
    g.trainable = trainable;
    if (trainable) out.push_back(&g);
  }
  return out;
}

// Per-tape leaves for every parameter group, parallel to model.groups.
struct VitBinding {
  std::vector<Tape::Var> vars;

  Tape::Var var(const VitModel& m, const std::string& name) const {
    return vars[m.index.at(name)];
  }
};

inline VitBinding bind_vit(Tape& t, const VitModel& m) {
  VitBinding b;
  b.vars.reserve(m.groups.size());
  for (const auto& g : m.groups) b.vars.push_back(t.leaf(g.value, g.trainable));
  return b;
}

// Accumulates tape gradients back into the model's gradient buffers.
inline void accumulate_vit_grads(Tape& t, const VitModel& m,
                                 const VitBinding& b,
                                 std::vector<ParamGroup>& groups) {
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (!groups[i].trainable) continue;
    const Tensor& g = t.grad(b.vars[i]);
    for (std::size_t k = 0; k < g.size(); ++k)
      groups[i].grad.data[k] += g.data[k];
  }
}

// Eq-style shallow insertion: learnable prompts appended after the image
// tokens; the original tokens keep their positions at the front.
inline Tape::Var insert_shallow_prompts(Tape& t, Tape::Var tokens,
                                        Tape::Var prompts) {
  const Tensor& pv = t.value(prompts);
  if (pv.size() == 0) return tokens;
  if (pv.shape.size() != 2 || pv.shape[1] != t.value(tokens).shape[1])
    throw ShapeError("insert_shallow_prompts: prompts " + pv.shape_str() +
                     " do not match token width " +
                     t.value(tokens).shape_str());
  return t.concat_rows(tokens, prompts);
}

namespace vit_detail {

inline std::shared_ptr<const std::vector<std::size_t>> patch_index(
    const VitConfig& c) {
  auto idx = std::make_shared<std::vector<std::size_t>>();
  std::size_t side = c.patches_per_side();
  std::size_t ps = static_cast<std::size_t>(c.patch_size);
  std::size_t w = static_cast<std::size_t>(c.image_size);
  std::size_t ch = static_cast<std::size_t>(c.channels);
  idx->reserve(c.num_patches() * c.patch_dim());
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px)
      for (std::size_t yy = 0; yy < ps; ++yy)
        for (std::size_t xx = 0; xx < ps; ++xx)
          for (std::size_t cc = 0; cc < ch; ++cc)
            idx->push_back(((py * ps + yy) * w + (px * ps + xx)) * ch + cc);
  return idx;
}

inline Tape::Var transformer_block(Tape& t, Tape::Var x, const VitModel& m,
                                   const VitBinding& b, std::size_t layer) {
  std::string p = "layer" + std::to_string(layer) + ".";
  Tape::Var ln1 = t.layernorm_rows(x, b.var(m, p + "ln1.g"),
                                   b.var(m, p + "ln1.b"));
  AttentionVars av{b.var(m, p + "attn.wq"), b.var(m, p + "attn.bq"),
                   b.var(m, p + "attn.wk"), b.var(m, p + "attn.bk"),
                   b.var(m, p + "attn.wv"), b.var(m, p + "attn.bv"),
                   b.var(m, p + "attn.wo"), b.var(m, p + "attn.bo")};
  Tape::Var h = t.add(x, multi_head_attention(t, ln1, av, m.config.heads));
  Tape::Var ln2 = t.layernorm_rows(h, b.var(m, p + "ln2.g"),
                                   b.var(m, p + "ln2.b"));
  MlpVars mv{b.var(m, p + "mlp.w1"), b.var(m, p + "mlp.b1"),
             b.var(m, p + "mlp.w2"), b.var(m, p + "mlp.b2")};
  return t.add(h, mlp_block(t, ln2, mv));
}

}  // namespace vit_detail

// Records the encoder forward pass on the tape starting from an already
// created image leaf (flat H*W*C). Returns the embedding as a (1, d) node.
inline Tape::Var vit_forward(Tape& t, const VitModel& m, const VitBinding& b,
                             Tape::Var image_leaf) {
  const VitConfig& c = m.config;
  std::size_t expect = static_cast<std::size_t>(c.image_size) * c.image_size *
                       c.channels;
  if (t.value(image_leaf).size() != expect)
    throw ShapeError("vit_forward: image has " +
                     std::to_string(t.value(image_leaf).size()) +
                     " values, encoder expects " + std::to_string(expect));
  Tape::Var patches = t.gather(image_leaf, vit_detail::patch_index(c),
                               {c.num_patches(), c.patch_dim()});
  // pixels arrive in [0,1]; center to [-1,1] before projection
  patches = t.add_scalar(t.scale(patches, 2.0), -1.0);
  Tape::Var tok = t.add_rowvec(t.matmul(patches, b.var(m, "patch_proj.w")),
                               b.var(m, "patch_proj.b"));
  tok = t.concat_rows(b.var(m, "cls_token"), tok);
  tok = t.add(tok, b.var(m, "pos_embed"));

  std::size_t h_tokens = c.num_tokens();
  if (c.prompt_mode == PromptMode::kShallow && c.prompt_len > 0)
    tok = insert_shallow_prompts(t, tok, b.var(m, "prompt.shallow"));

  for (std::size_t l = 0; l < c.layers; ++l) {
    if (c.prompt_mode == PromptMode::kDeep && c.prompt_len > 0) {
      tok = t.concat_rows(tok, b.var(m, "prompt.deep" + std::to_string(l)));
      tok = vit_detail::transformer_block(t, tok, m, b, l);
      tok = t.slice_rows(tok, 0, h_tokens);  // drop the layer's prompts
    } else {
      tok = vit_detail::transformer_block(t, tok, m, b, l);
    }
  }
  Tape::Var cls = t.slice_rows(tok, 0, 1);
  cls = t.layernorm_rows(cls, b.var(m, "final_ln.g"), b.var(m, "final_ln.b"));
  return t.matmul(cls, b.var(m, "head.w"));
}

inline Tensor image_as_tensor(const Image& img) {
  Tensor t;
  t.shape = {img.data.size()};
  t.data = img.data;
  return t;
}

// Eval-mode embedding: a pure function of (weights, image).
inline Tensor encode_image(const VitModel& m, const Image& img) {
  if (img.height != m.config.image_size || img.width != m.config.image_size ||
      img.channels != m.config.channels)
    throw ShapeError("encode_image: got " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + "x" +
                     std::to_string(img.channels) + ", encoder expects " +
                     std::to_string(m.config.image_size) + "x" +
                     std::to_string(m.config.image_size) + "x" +
                     std::to_string(m.config.channels));
  Tape t;
  VitBinding b;
  b.vars.reserve(m.groups.size());
  for (const auto& g : m.groups) b.vars.push_back(t.leaf(g.value, false));
  Tape::Var img_leaf = t.leaf(image_as_tensor(img), false);
  Tape::Var e = vit_forward(t, m, b, img_leaf);
  Tensor out = t.value(e);
  out.shape = {out.size()};
  return out;
}

inline Checkpoint vit_to_checkpoint(const VitModel& m) {
  Checkpoint ck;
  ck.meta["encoder_config"] = m.config.to_json().dump();
  for (const auto& g : m.groups) ck.tensors.emplace_back(g.name, g.value);
  return ck;
}

inline VitModel vit_from_checkpoint(const Checkpoint& ck) {
  auto it = ck.meta.find("encoder_config");
  if (it == ck.meta.end())
    throw DataError("checkpoint lacks encoder_config metadata");
  VitConfig config;
  try {
    config = VitConfig::from_json(nlohmann::json::parse(it->second));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad encoder_config metadata: ") + e.what());
  }
  VitModel m = init_vit(config, 0);
  for (auto& g : m.groups) {
    const Tensor* t = ck.find(g.name);
    if (!t) throw DataError("checkpoint missing tensor '" + g.name + "'");
    if (t->shape != g.value.shape)
      throw DataError("checkpoint tensor '" + g.name + "' has shape " +
                      t->shape_str() + ", expected " + g.value.shape_str());
    g.value = *t;
  }
  return m;
}

}  // namespace attriq
