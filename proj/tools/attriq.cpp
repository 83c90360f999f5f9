#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "attriq/commands.hpp"

namespace {

using attriq::cli::CommonOpts;

// CLI11 fills plain values; we track which flags were actually given so
// that flags win over the config file without clobbering its values.
template <typename T>
struct Tracked {
  T value{};
  CLI::Option* opt = nullptr;
  std::optional<T> get() const {
    if (opt && opt->count() > 0) return value;
    return std::nullopt;
  }
};

struct CommonFlags {
  Tracked<std::string> config;
  Tracked<std::uint64_t> seed;
  Tracked<std::size_t> workers;
  Tracked<std::string> data_root;

  void attach(CLI::App* app) {
    config.opt = app->add_option("--config", config.value,
                                 "JSON config file; flags override it");
    seed.opt = app->add_option("--seed", seed.value, "master random seed");
    workers.opt = app->add_option("--workers", workers.value,
                                  "worker threads (0 = all cores)");
    data_root.opt = app->add_option(
        "--data-root", data_root.value,
        "base dir for manifest-relative image paths (env ATTRIQ_DATA_ROOT)");
  }

  CommonOpts resolve() const {
    CommonOpts c;
    std::string cfg_path;
    if (auto v = config.get()) cfg_path = *v;
    c.config = attriq::cli::load_config_file(cfg_path);
    c.seed = seed.get();
    c.workers = workers.get();
    c.data_root = data_root.get();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attribute-anchored distortion identification and quality "
               "scoring toolkit"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate",
                                 "synthesize a multi-distortion dataset");
  CommonFlags gen_common;
  gen_common.attach(gen);
  Tracked<std::string> gen_sources, gen_out;
  Tracked<int> gen_repeats, gen_levels;
  Tracked<std::vector<std::string>> gen_dists;
  Tracked<bool> gen_scores, gen_noimg;
  gen_sources.opt = gen->add_option("--sources", gen_sources.value,
                                    "directory of pristine source PNGs");
  gen_out.opt = gen->add_option("--out", gen_out.value, "output directory");
  gen_repeats.opt = gen->add_option("--repeats", gen_repeats.value,
                                    "variants per source (default 10)");
  gen_levels.opt = gen->add_option("--levels", gen_levels.value,
                                   "strength levels (default 5)");
  gen_dists.opt = gen->add_option("--distortions", gen_dists.value,
                                  "distortion ids (default: all supported)");
  gen_scores.opt = gen->add_flag("--synthetic-scores", gen_scores.value,
                                 "record score = 1 - mean applied strength");
  gen_noimg.opt = gen->add_flag("--no-images", gen_noimg.value,
                                "plan and write the manifest only");

  // build-registry
  auto* breg = app.add_subcommand("build-registry",
                                  "assemble an attribute registry");
  CommonFlags breg_common;
  breg_common.attach(breg);
  Tracked<std::string> breg_attrs, breg_embed, breg_out;
  Tracked<std::size_t> breg_dim;
  Tracked<std::vector<std::string>> breg_dists;
  breg_attrs.opt = breg->add_option("--attributes", breg_attrs.value,
                                    "attribute JSON source file");
  breg_embed.opt = breg->add_option(
      "--embeddings", breg_embed.value,
      "'toy' or path to a binary anchor table (default toy)");
  breg_dim.opt = breg->add_option("--dim", breg_dim.value,
                                  "embedding dimension (default 64)");
  breg_dists.opt = breg->add_option("--distortions", breg_dists.value,
                                    "subset/order of distortions to include");
  breg_out.opt = breg->add_option("--out", breg_out.value,
                                  "output registry JSON path");

  // train-dist
  auto* tdist = app.add_subcommand("train-dist",
                                   "train the distortion identifier");
  CommonFlags tdist_common;
  tdist_common.attach(tdist);
  Tracked<std::string> td_manifest, td_registry, td_mode, td_out;
  Tracked<std::size_t> td_epochs, td_warmup, td_batch, td_dmodel, td_layers,
      td_heads, td_mlp, td_plen;
  Tracked<double> td_lr;
  Tracked<int> td_imgsize, td_patch;
  td_manifest.opt = tdist->add_option("--manifest", td_manifest.value,
                                      "training manifest");
  td_registry.opt = tdist->add_option("--registry", td_registry.value,
                                      "attribute registry JSON");
  td_mode.opt = tdist->add_option("--mode", td_mode.value,
                                  "shallow | deep | full (default full)");
  td_out.opt = tdist->add_option("--out", td_out.value, "checkpoint path");
  td_epochs.opt = tdist->add_option("--epochs", td_epochs.value, "epochs");
  td_warmup.opt = tdist->add_option("--warmup", td_warmup.value,
                                    "warmup epochs");
  td_lr.opt = tdist->add_option("--lr-max", td_lr.value, "peak learning rate");
  td_batch.opt = tdist->add_option("--batch-size", td_batch.value,
                                   "batch size");
  td_imgsize.opt = tdist->add_option("--image-size", td_imgsize.value,
                                     "encoder input size (default 64)");
  td_patch.opt = tdist->add_option("--patch-size", td_patch.value,
                                   "patch size (default 8)");
  td_dmodel.opt = tdist->add_option("--d-model", td_dmodel.value,
                                    "transformer width (default 64)");
  td_layers.opt = tdist->add_option("--layers", td_layers.value,
                                    "transformer depth (default 4)");
  td_heads.opt = tdist->add_option("--heads", td_heads.value,
                                   "attention heads (default 4)");
  td_mlp.opt = tdist->add_option("--mlp-ratio", td_mlp.value,
                                 "MLP expansion (default 2)");
  td_plen.opt = tdist->add_option("--prompt-len", td_plen.value,
                                  "prompt length for prompt modes");

  // extract
  auto* ext = app.add_subcommand("extract",
                                 "attribute probabilities from a frozen model");
  CommonFlags ext_common;
  ext_common.attach(ext);
  Tracked<std::string> ex_manifest, ex_registry, ex_ckpt, ex_out, ex_scores;
  ex_manifest.opt = ext->add_option("--manifest", ex_manifest.value,
                                    "manifest to extract over");
  ex_registry.opt = ext->add_option("--registry", ex_registry.value,
                                    "attribute registry JSON");
  ex_ckpt.opt = ext->add_option("--checkpoint", ex_ckpt.value,
                                "distortion model checkpoint");
  ex_out.opt = ext->add_option("--out", ex_out.value,
                               "output probability matrix CSV");
  ex_scores.opt = ext->add_option("--scores-out", ex_scores.value,
                                  "also write a scores CSV from the manifest");

  // train-reg
  auto* treg = app.add_subcommand("train-reg", "train the quality regressor");
  CommonFlags treg_common;
  treg_common.attach(treg);
  Tracked<std::string> tr_probs, tr_scores, tr_manifest, tr_registry, tr_out;
  Tracked<std::size_t> tr_h1, tr_h2, tr_epochs, tr_warmup, tr_batch;
  Tracked<double> tr_dropout, tr_lr, tr_train_frac, tr_val_frac;
  tr_probs.opt = treg->add_option("--probs", tr_probs.value,
                                  "probability matrix CSV");
  tr_scores.opt = treg->add_option("--scores", tr_scores.value,
                                   "scores CSV (raw + range + polarity)");
  tr_manifest.opt = treg->add_option("--manifest", tr_manifest.value,
                                     "manifest with scores (alternative)");
  tr_registry.opt = treg->add_option("--registry", tr_registry.value,
                                     "registry for column validation");
  tr_out.opt = treg->add_option("--out", tr_out.value,
                                "regressor checkpoint path");
  tr_h1.opt = treg->add_option("--hidden1", tr_h1.value, "(default 128)");
  tr_h2.opt = treg->add_option("--hidden2", tr_h2.value, "(default 64)");
  tr_dropout.opt = treg->add_option("--dropout", tr_dropout.value,
                                    "(default 0.2)");
  tr_epochs.opt = treg->add_option("--epochs", tr_epochs.value,
                                   "(default 100)");
  tr_warmup.opt = treg->add_option("--warmup", tr_warmup.value, "(default 0)");
  tr_lr.opt = treg->add_option("--lr-max", tr_lr.value, "(default 1e-3)");
  tr_batch.opt = treg->add_option("--batch-size", tr_batch.value,
                                  "(default 32)");
  tr_train_frac.opt = treg->add_option("--train-frac", tr_train_frac.value,
                                       "(default 0.8)");
  tr_val_frac.opt = treg->add_option("--val-frac", tr_val_frac.value,
                                     "(default 0.1)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate distortion or score metrics");
  CommonFlags ev_common;
  ev_common.attach(ev);
  Tracked<std::string> ev_task, ev_manifest, ev_registry, ev_ckpt, ev_preds,
      ev_probs, ev_reg, ev_scores, ev_split, ev_out;
  Tracked<double> ev_train_frac, ev_val_frac;
  ev_task.opt = ev->add_option("--task", ev_task.value,
                               "dist | score (default dist)");
  ev_manifest.opt = ev->add_option("--manifest", ev_manifest.value,
                                   "ground-truth manifest");
  ev_registry.opt = ev->add_option("--registry", ev_registry.value,
                                   "registry (dist task)");
  ev_ckpt.opt = ev->add_option("--checkpoint", ev_ckpt.value,
                               "distortion checkpoint (dist task)");
  ev_preds.opt = ev->add_option("--predictions", ev_preds.value,
                                "distortion predictions CSV (dist task)");
  ev_probs.opt = ev->add_option("--probs", ev_probs.value,
                                "probability matrix CSV (score task)");
  ev_reg.opt = ev->add_option("--regressor", ev_reg.value,
                              "regressor checkpoint (score task)");
  ev_scores.opt = ev->add_option("--scores", ev_scores.value,
                                 "scores CSV (score task)");
  ev_split.opt = ev->add_option("--split", ev_split.value,
                                "all | train | val | test (default all)");
  ev_train_frac.opt = ev->add_option("--train-frac", ev_train_frac.value,
                                     "(default 0.8)");
  ev_val_frac.opt = ev->add_option("--val-frac", ev_val_frac.value,
                                   "(default 0.1)");
  ev_out.opt = ev->add_option("--out", ev_out.value, "report JSON path");

  // saliency
  auto* sal = app.add_subcommand("saliency", "input-gradient saliency maps");
  CommonFlags sal_common;
  sal_common.attach(sal);
  Tracked<std::string> sa_ckpt, sa_registry, sa_manifest, sa_dist, sa_out;
  Tracked<std::vector<std::string>> sa_images;
  Tracked<std::size_t> sa_limit;
  Tracked<double> sa_sigma, sa_blend;
  Tracked<bool> sa_csv;
  sa_ckpt.opt = sal->add_option("--checkpoint", sa_ckpt.value,
                                "distortion checkpoint");
  sa_registry.opt = sal->add_option("--registry", sa_registry.value,
                                    "attribute registry");
  sa_manifest.opt = sal->add_option("--manifest", sa_manifest.value,
                                    "take images from this manifest");
  sa_images.opt = sal->add_option("--image", sa_images.value,
                                  "explicit image path (repeatable)");
  sa_dist.opt = sal->add_option("--distortion", sa_dist.value,
                                "target distortion id");
  sa_limit.opt = sal->add_option("--limit", sa_limit.value,
                                 "max manifest records (default 4)");
  sa_sigma.opt = sal->add_option("--sigma", sa_sigma.value,
                                 "smoothing sigma (default 1, 0 = off)");
  sa_blend.opt = sal->add_option("--blend", sa_blend.value,
                                 "overlay blend factor (default 0.6)");
  sa_csv.opt = sal->add_flag("--csv", sa_csv.value, "also write raw map CSV");
  sa_out.opt = sal->add_option("--out", sa_out.value, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      attriq::cli::GenerateOpts o;
      o.common = gen_common.resolve();
      o.sources_dir = gen_sources.get();
      o.out = gen_out.get();
      o.repeats = gen_repeats.get();
      o.level_count = gen_levels.get();
      o.distortions = gen_dists.get();
      o.synthetic_scores = gen_scores.get();
      o.no_images = gen_noimg.get();
      return attriq::cli::cmd_generate(o);
    }
    if (breg->parsed()) {
      attriq::cli::BuildRegistryOpts o;
      o.common = breg_common.resolve();
      o.attributes = breg_attrs.get();
      o.embeddings = breg_embed.get();
      o.dim = breg_dim.get();
      o.distortions = breg_dists.get();
      o.out = breg_out.get();
      return attriq::cli::cmd_build_registry(o);
    }
    if (tdist->parsed()) {
      attriq::cli::TrainDistOpts o;
      o.common = tdist_common.resolve();
      o.manifest = td_manifest.get();
      o.registry = td_registry.get();
      o.mode = td_mode.get();
      o.out = td_out.get();
      o.epochs = td_epochs.get();
      o.warmup = td_warmup.get();
      o.batch_size = td_batch.get();
      o.lr_max = td_lr.get();
      o.image_size = td_imgsize.get();
      o.patch_size = td_patch.get();
      o.d_model = td_dmodel.get();
      o.layers = td_layers.get();
      o.heads = td_heads.get();
      o.mlp_ratio = td_mlp.get();
      o.prompt_len = td_plen.get();
      return attriq::cli::cmd_train_dist(o);
    }
    if (ext->parsed()) {
      attriq::cli::ExtractOpts o;
      o.common = ext_common.resolve();
      o.manifest = ex_manifest.get();
      o.registry = ex_registry.get();
      o.checkpoint = ex_ckpt.get();
      o.out = ex_out.get();
      o.scores_out = ex_scores.get();
      return attriq::cli::cmd_extract(o);
    }
    if (treg->parsed()) {
      attriq::cli::TrainRegOpts o;
      o.common = treg_common.resolve();
      o.probs = tr_probs.get();
      o.scores = tr_scores.get();
      o.manifest = tr_manifest.get();
      o.registry = tr_registry.get();
      o.out = tr_out.get();
      o.hidden1 = tr_h1.get();
      o.hidden2 = tr_h2.get();
      o.dropout = tr_dropout.get();
      o.epochs = tr_epochs.get();
      o.warmup = tr_warmup.get();
      o.lr_max = tr_lr.get();
      o.batch_size = tr_batch.get();
      o.train_frac = tr_train_frac.get();
      o.val_frac = tr_val_frac.get();
      return attriq::cli::cmd_train_reg(o);
    }
    if (ev->parsed()) {
      attriq::cli::EvalOpts o;
      o.common = ev_common.resolve();
      o.task = ev_task.get();
      o.manifest = ev_manifest.get();
      o.registry = ev_registry.get();
      o.checkpoint = ev_ckpt.get();
      o.predictions = ev_preds.get();
      o.probs = ev_probs.get();
      o.regressor = ev_reg.get();
      o.scores = ev_scores.get();
      o.split = ev_split.get();
      o.train_frac = ev_train_frac.get();
      o.val_frac = ev_val_frac.get();
      o.out = ev_out.get();
      return attriq::cli::cmd_eval(o);
    }
    if (sal->parsed()) {
      attriq::cli::SaliencyOpts o;
      o.common = sal_common.resolve();
      o.checkpoint = sa_ckpt.get();
      o.registry = sa_registry.get();
      o.manifest = sa_manifest.get();
      o.images = sa_images.get();
      o.distortion = sa_dist.get();
      o.limit = sa_limit.get();
      o.sigma = sa_sigma.get();
      o.blend = sa_blend.get();
      o.csv = sa_csv.get();
      o.out = sa_out.get();
      return attriq::cli::cmd_saliency(o);
    }
  } catch (const attriq::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.category()) {
      case attriq::Error::Category::kConfig: return 2;
      case attriq::Error::Category::kData: return 3;
      case attriq::Error::Category::kNumerical: return 4;
    }
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
