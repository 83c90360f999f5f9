#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriq/attribute_model.hpp"
#include "attriq/datagen.hpp"
#include "attriq/metrics.hpp"
#include "attriq/prob_matrix.hpp"
#include "attriq/regressor.hpp"
#include "attriq/saliency.hpp"

// Operator surface: each cmd_* mirrors one CLI subcommand. Values resolve
// as flag > config-file section > default; every run leaves a resolved
// config snapshot next to its outputs, and inputs are digest-checked before
// any work happens.
namespace attriq::cli {

namespace fs = std::filesystem;

inline nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed config JSON: " + e.what());
  }
  static const std::set<std::string> top = {
      "seed",     "workers",    "data_root", "generate", "build_registry",
      "train_dist", "extract",  "train_reg", "eval",     "saliency"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!top.count(it.key()))
      throw ConfigError(path + ": unknown config key '" + it.key() + "'");
  return j;
}

inline nlohmann::json section_of(const nlohmann::json& config,
                                 const std::string& name) {
  if (config.contains(name)) {
    if (!config[name].is_object())
      throw ConfigError("config section '" + name + "' must be an object");
    return config[name];
  }
  return nlohmann::json::object();
}

inline void check_section_keys(const nlohmann::json& section,
                               const std::set<std::string>& allowed,
                               const std::string& name) {
  for (auto it = section.begin(); it != section.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config section '" + name + "': unknown key '" +
                        it.key() + "'");
}

template <typename T>
T pick(const std::optional<T>& flag, const nlohmann::json& section,
       const char* key, T fallback) {
  if (flag) return *flag;
  if (section.contains(key)) {
    try {
      return section[key].get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
  return fallback;
}

inline void write_snapshot(const nlohmann::json& resolved,
                           const std::string& out_path) {
  fs::path p(out_path);
  fs::path snap = fs::is_directory(p) || !p.has_extension()
                      ? p / "resolved_config.json"
                      : fs::path(out_path + ".config.json");
  if (snap.has_parent_path()) fs::create_directories(snap.parent_path());
  std::ofstream out(snap);
  if (!out) throw DataError("cannot write config snapshot: " + snap.string());
  out << resolved.dump(2) << "\n";
}

struct CommonOpts {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> data_root;
  nlohmann::json config = nlohmann::json::object();

  std::uint64_t resolved_seed() const {
    if (seed) return *seed;
    if (config.contains("seed")) return config["seed"].get<std::uint64_t>();
    return 0;
  }
  std::size_t resolved_workers() const {
    if (workers) return *workers;
    if (config.contains("workers"))
      return config["workers"].get<std::size_t>();
    return 0;  // auto
  }
  // Data root for manifest-relative image paths: flag, else config, else
  // ATTRIQ_DATA_ROOT, else the manifest's own directory.
  std::string resolved_data_root(const std::string& manifest_path) const {
    if (data_root) return *data_root;
    if (config.contains("data_root"))
      return config["data_root"].get<std::string>();
    if (const char* env = std::getenv("ATTRIQ_DATA_ROOT")) return env;
    fs::path p(manifest_path);
    return p.has_parent_path() ? p.parent_path().string() : ".";
  }
};

// ---- generate -------------------------------------------------------------

struct GenerateOpts {
  CommonOpts common;
  std::optional<std::string> sources_dir;
  std::optional<std::string> out;
  std::optional<int> repeats;
  std::optional<int> level_count;
  std::optional<std::vector<std::string>> distortions;
  std::optional<bool> synthetic_scores;
  std::optional<bool> no_images;
};

inline int cmd_generate(const GenerateOpts& opts) {
  nlohmann::json sec = section_of(opts.common.config, "generate");
  check_section_keys(sec,
                     {"sources_dir", "out", "repeats", "level_count",
                      "distortions", "synthetic_scores", "no_images"},
                     "generate");
  GeneratorConfig cfg;
  std::string sources_dir =
      pick(opts.sources_dir, sec, "sources_dir", std::string());
  cfg.out_dir = pick(opts.out, sec, "out", std::string());
  if (sources_dir.empty()) throw ConfigError("generate: sources_dir required");
  if (cfg.out_dir.empty()) throw ConfigError("generate: out required");
  cfg.repeats = pick(opts.repeats, sec, "repeats", 10);
  cfg.level_count = pick(opts.level_count, sec, "level_count", 5);
  cfg.distortions =
      pick(opts.distortions, sec, "distortions", std::vector<std::string>{});
  cfg.synthetic_scores = pick(opts.synthetic_scores, sec, "synthetic_scores",
                              false);
  cfg.write_images = !pick(opts.no_images, sec, "no_images", false);
  cfg.master_seed = opts.common.resolved_seed();
  cfg.workers = opts.common.resolved_workers();

  if (!fs::is_directory(sources_dir))
    throw DataError("generate: sources_dir is not a directory: " + sources_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(sources_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    cfg.sources.push_back({f.stem().string(), f.string()});

  GenerateResult result = generate(cfg);

  nlohmann::json resolved;
  resolved["command"] = "generate";
  resolved["sources_dir"] = sources_dir;
  resolved["out"] = cfg.out_dir;
  resolved["repeats"] = cfg.repeats;
  resolved["level_count"] = cfg.level_count;
  resolved["distortions"] = cfg.distortions;
  resolved["synthetic_scores"] = cfg.synthetic_scores;
  resolved["write_images"] = cfg.write_images;
  resolved["seed"] = cfg.master_seed;
  resolved["source_count"] = cfg.sources.size();
  write_snapshot(resolved, cfg.out_dir);

  std::cout << "generate: " << result.records.size() << " records ("
            << result.images_written << " images) from "
            << cfg.sources.size() - result.rejects.size() << " sources, "
            << result.rejects.size() << " rejected; manifest "
            << result.manifest_path << "\n";
  return 0;
}

// ---- build-registry ---------------------------------------------------------

struct BuildRegistryOpts {
  CommonOpts common;
  std::optional<std::string> attributes;
  std::optional<std::string> embeddings;  // "toy" or anchor table path
  std::optional<std::size_t> dim;
  std::optional<std::vector<std::string>> distortions;
  std::optional<std::string> out;
};

inline int cmd_build_registry(const BuildRegistryOpts& opts) {
  nlohmann::json sec = section_of(opts.common.config, "build_registry");
  check_section_keys(sec, {"attributes", "embeddings", "dim", "distortions",
                           "out"},
                     "build_registry");
  std::string attributes =
      pick(opts.attributes, sec, "attributes", std::string());
  std::string embeddings =
      pick(opts.embeddings, sec, "embeddings", std::string("toy"));
  std::size_t dim = pick(opts.dim, sec, "dim", std::size_t{64});
  std::vector<std::string> subset =
      pick(opts.distortions, sec, "distortions", std::vector<std::string>{});
  std::string out = pick(opts.out, sec, "out", std::string());
  if (attributes.empty())
    throw ConfigError("build-registry: attributes file required");
  if (out.empty()) throw ConfigError("build-registry: out required");

  AttributeRegistry reg = build_registry(attributes, embeddings, dim, subset);
  if (fs::path(out).has_parent_path())
    fs::create_directories(fs::path(out).parent_path());
  save_registry(reg, out);
  std::string digest = digest_of_file(out);

  nlohmann::json resolved;
  resolved["command"] = "build-registry";
  resolved["attributes"] = attributes;
  resolved["embeddings"] = embeddings;
  resolved["dim"] = dim;
  resolved["distortions"] = subset;
  resolved["out"] = out;
  resolved["registry_digest"] = digest;
  write_snapshot(resolved, out);

  std::cout << "build-registry: " << reg.distortions.size()
            << " distortions x " << reg.attrs_per_distortion
            << " attributes, provenance " << reg.embedding_provenance
            << ", digest " << digest << " -> " << out << "\n";
  return 0;
}

// ---- train-dist -------------------------------------------------------------

struct TrainDistOpts {
  CommonOpts common;
  std::optional<std::string> manifest;
  std::optional<std::string> registry;
  std::optional<std::string> mode;  // shallow | deep | full
  std::optional<std::string> out;
  std::optional<std::size_t> epochs, warmup, batch_size;
  std::optional<double> lr_max;
  std::optional<int> image_size, patch_size;
  std::optional<std::size_t> d_model, layers, heads, mlp_ratio, prompt_len;
};

inline int cmd_train_dist(const TrainDistOpts& opts) {
  nlohmann::json sec = section_of(opts.common.config, "train_dist");
  check_section_keys(
      sec, {"manifest", "registry", "mode", "out", "epochs", "warmup",
            "batch_size", "lr_max", "image_size", "patch_size", "d_model",
            "layers", "heads", "mlp_ratio", "prompt_len"},
      "train_dist");
  std::string manifest_path =
      pick(opts.manifest, sec, "manifest", std::string());
  std::string registry_path =
      pick(opts.registry, sec, "registry", std::string());
  std::string out = pick(opts.out, sec, "out", std::string());
  std::string mode_name = pick(opts.mode, sec, "mode", std::string("full"));
  if (manifest_path.empty() || registry_path.empty() || out.empty())
    throw ConfigError("train-dist: manifest, registry and out are required");
  FinetuneMode mode = finetune_mode_from(mode_name);

  AttributeRegistry reg = load_registry(registry_path);
  ManifestFile mf = load_manifest(manifest_path);
  if (mf.records.empty()) throw DataError("train-dist: empty manifest");

  VitConfig vc;
  vc.image_size = pick(opts.image_size, sec, "image_size", 64);
  vc.patch_size = pick(opts.patch_size, sec, "patch_size", 8);
  vc.d_model = pick(opts.d_model, sec, "d_model", std::size_t{64});
  vc.layers = pick(opts.layers, sec, "layers", std::size_t{4});
  vc.heads = pick(opts.heads, sec, "heads", std::size_t{4});
  vc.mlp_ratio = pick(opts.mlp_ratio, sec, "mlp_ratio", std::size_t{2});
  vc.embed_dim = reg.dim;
  vc.prompt_len = pick(opts.prompt_len, sec, "prompt_len", std::size_t{0});
  switch (mode) {
    case FinetuneMode::kShallow:
      vc.prompt_mode = PromptMode::kShallow;
      if (vc.prompt_len == 0) vc.prompt_len = 100;
      break;
    case FinetuneMode::kDeep:
      vc.prompt_mode = PromptMode::kDeep;
      if (vc.prompt_len == 0) vc.prompt_len = 10;
      break;
    case FinetuneMode::kFull:
      vc.prompt_mode =
          vc.prompt_len > 0 ? PromptMode::kShallow : PromptMode::kNone;
      break;
  }
  vc.validate();

  TrainSchedule schedule = default_schedule(mode);
  schedule.epochs = pick(opts.epochs, sec, "epochs", schedule.epochs);
  schedule.warmup_epochs =
      pick(opts.warmup, sec, "warmup", schedule.warmup_epochs);
  schedule.lr_max = pick(opts.lr_max, sec, "lr_max", schedule.lr_max);
  schedule.batch_size =
      pick(opts.batch_size, sec, "batch_size", schedule.batch_size);

  std::uint64_t seed = opts.common.resolved_seed();
  std::string data_root = opts.common.resolved_data_root(manifest_path);

  DistortionModel model = init_distortion_model(vc, reg, seed);
  TrainResult tr =
      train_distortion_model(model, mf.records, reg, mode, schedule, seed,
                             data_root, opts.common.resolved_workers(),
                             &std::cout);

  Checkpoint ck = distortion_model_to_checkpoint(model, reg);
  ck.meta["creator"] = "attriq train-dist";
  ck.meta["mode"] = finetune_mode_name(mode);
  ck.meta["seed"] = std::to_string(seed);
  ck.meta["schedule"] = schedule.to_json().dump();
  ck.meta["manifest_digest"] = digest_of_file(manifest_path);
  ck.meta["level_count"] = std::to_string(mf.header.level_count);
  if (!tr.epoch_losses.empty()) {
    ck.meta["first_epoch_loss"] = std::to_string(tr.epoch_losses.front());
    ck.meta["final_epoch_loss"] = std::to_string(tr.epoch_losses.back());
  }
  if (fs::path(out).has_parent_path())
    fs::create_directories(fs::path(out).parent_path());
  save_checkpoint(ck, out);

  nlohmann::json resolved;
  resolved["command"] = "train-dist";
  resolved["manifest"] = manifest_path;
  resolved["registry"] = registry_path;
  resolved["mode"] = finetune_mode_name(mode);
  resolved["out"] = out;
  resolved["seed"] = seed;
  resolved["encoder"] = vc.to_json();
  resolved["schedule"] = schedule.to_json();
  resolved["registry_digest"] = reg.digest;
  write_snapshot(resolved, out);

  std::cout << "train-dist: " << mf.records.size() << " records, mode "
            << finetune_mode_name(mode) << ", final loss "
            << (tr.epoch_losses.empty() ? 0.0 : tr.epoch_losses.back())
            << " -> " << out << "\n";
  return 0;
}

// ---- extract ----------------------------------------------------------------

struct ExtractOpts {
  CommonOpts common;
  std::optional<std::string> manifest;
  std::optional<std::string> registry;
  std::optional<std::string> checkpoint;
  std::optional<std::string> out;
  std::optional<std::string> scores_out;
};

inline int cmd_extract(const ExtractOpts& opts) {
  nlohmann::json sec = section_of(opts.common.config, "extract");
  check_section_keys(
      sec, {"manifest", "registry", "checkpoint", "out", "scores_out"},
      "extract");
  std::string manifest_path = pick(opts.manifest, sec, "manifest", std::string());
  std::string registry_path = pick(opts.registry, sec, "registry", std::string());
  std::string ckpt_path = pick(opts.checkpoint, sec, "checkpoint", std::string());
  std::string out = pick(opts.out, sec, "out", std::string());
  std::string scores_out = pick(opts.scores_out, sec, "scores_out", std::string());
  if (manifest_path.empty() || registry_path.empty() || ckpt_path.empty() ||
      out.empty())
    throw ConfigError(
        "extract: manifest, registry, checkpoint and out are required");

  AttributeRegistry reg = load_registry(registry_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  require_registry_binding(ck, reg);
  DistortionModel model = distortion_model_from_checkpoint(ck);
  ManifestFile mf = load_manifest(manifest_path);
  std::string data_root = opts.common.resolved_data_root(manifest_path);

  Tensor probs = extract_attribute_probs(mf.records, model, reg, data_root,
                                         opts.common.resolved_workers());

  CsvTable table;
  table.format = kProbMatrixFormat;
  table.meta["creator"] = "attriq extract";
  table.meta["checkpoint_digest"] = digest_of_file(ckpt_path);
  table.meta["registry_digest"] = reg.digest;
  table.meta["manifest_digest"] = digest_of_file(manifest_path);
  table.columns = reg.column_names();
  for (const auto& rec : mf.records) table.row_ids.push_back(rec.record_id());
  table.values = probs;
  if (fs::path(out).has_parent_path())
    fs::create_directories(fs::path(out).parent_path());
  write_csv_table(table, out);

  if (!scores_out.empty()) {
    ScoreFile sf;
    sf.range_lo = 0.0;
    sf.range_hi = 1.0;
    sf.higher_better = true;
    sf.meta["creator"] = "attriq extract";
    sf.meta["manifest_digest"] = table.meta["manifest_digest"];
    for (const auto& rec : mf.records) {
      if (!rec.score)
        throw DataError("extract: record " + rec.record_id() +
                        " has no score; cannot write scores file");
      sf.row_ids.push_back(rec.record_id());
      sf.raw.push_back(*rec.score);
    }
    write_scores(sf, scores_out);
  }

  nlohmann::json resolved;
  resolved["command"] = "extract";
  resolved["manifest"] = manifest_path;
  resolved["registry"] = registry_path;
  resolved["checkpoint"] = ckpt_path;
  resolved["out"] = out;
  if (!scores_out.empty()) resolved["scores_out"] = scores_out;
  write_snapshot(resolved, out);

  std::cout << "extract: " << mf.records.size() << " records x "
            << table.columns.size() << " attribute columns -> " << out << "\n";
  return 0;
}

// ---- train-reg ----------------------------------------------------------------

struct TrainRegOpts {
  CommonOpts common;
  std::optional<std::string> probs;
  std::optional<std::string> scores;    // scores CSV
  std::optional<std::string> manifest;  // alternative score source
  std::optional<std::string> registry;
  std::optional<std::string> out;
  std::optional<std::size_t> hidden1, hidden2, epochs, warmup, batch_size;
  std::optional<double> dropout, lr_max, train_frac, val_frac;
};

inline int cmd_train_reg(const TrainRegOpts& opts) {
  nlohmann::json sec = section_of(opts.common.config, "train_reg");
  check_section_keys(sec, {"probs", "scores", "manifest", "registry", "out",
                           "hidden1", "hidden2", "epochs", "warmup",
                           "batch_size", "dropout", "lr_max", "train_frac",
                           "val_frac"},
                     "train_reg");
  std::string probs_path = pick(opts.probs, sec, "probs", std::string());
  std::string scores_path = pick(opts.scores, sec, "scores", std::string());
  std::string manifest_path = pick(opts.manifest, sec, "manifest", std::string());
  std::string registry_path = pick(opts.registry, sec, "registry", std::string());
  std::string out = pick(opts.out, sec, "out", std::string());
  if (probs_path.empty() || registry_path.empty() || out.empty())
    throw ConfigError("train-reg: probs, registry and out are required");
  if (scores_path.empty() == manifest_path.empty())
    throw ConfigError(
        "train-reg: exactly one of scores or manifest must provide targets");

  AttributeRegistry reg = load_registry(registry_path);
  CsvTable probs = load_csv_table(probs_path, kProbMatrixFormat);
  require_prob_columns(probs, reg);
  if (probs.meta.count("registry_digest") &&
      probs.meta.at("registry_digest") != reg.digest)
    throw ConfigError("probability matrix bound to registry " +
                      probs.meta.at("registry_digest") +
                      ", loaded registry is " + reg.digest);

  std::vector<double> targets(probs.row_ids.size());
  std::string scores_digest;
  if (!scores_path.empty()) {
    ScoreFile sf = load_scores(scores_path);
    if (sf.row_ids != probs.row_ids)
      throw ConfigError("scores file records do not match the probability "
                        "matrix records");
    ScoreNormalizer norm(sf.range_lo, sf.range_hi, sf.higher_better);
    for (std::size_t i = 0; i < sf.raw.size(); ++i)
      targets[i] = norm.normalize(sf.raw[i]);
    scores_digest = digest_of_file(scores_path);
  } else {
    ManifestFile mf = load_manifest(manifest_path);
    if (probs.meta.count("manifest_digest") &&
        probs.meta.at("manifest_digest") != digest_of_file(manifest_path))
      throw ConfigError("probability matrix bound to manifest " +
                        probs.meta.at("manifest_digest") +
                        ", loaded manifest is " +
                        digest_of_file(manifest_path));
    std::map<std::string, double> by_id;
    for (const auto& rec : mf.records) {
      if (!rec.score)
        throw DataError("train-reg: record " + rec.record_id() +
                        " has no score");
      by_id[rec.record_id()] = *rec.score;
    }
    for (std::size_t i = 0; i < probs.row_ids.size(); ++i) {
      auto it = by_id.find(probs.row_ids[i]);
      if (it == by_id.end())
        throw DataError("train-reg: manifest lacks record " +
                        probs.row_ids[i]);
      targets[i] = it->second;
    }
    scores_digest = digest_of_file(manifest_path);
  }

  RegressorConfig rc;
  rc.input_dim = probs.columns.size();
  rc.hidden1 = pick(opts.hidden1, sec, "hidden1", std::size_t{128});
  rc.hidden2 = pick(opts.hidden2, sec, "hidden2", std::size_t{64});
  rc.dropout = pick(opts.dropout, sec, "dropout", 0.2);

  RegressorSchedule schedule;
  schedule.epochs = pick(opts.epochs, sec, "epochs", std::size_t{100});
  schedule.warmup_epochs = pick(opts.warmup, sec, "warmup", std::size_t{0});
  schedule.lr_max = pick(opts.lr_max, sec, "lr_max", 1e-3);
  schedule.batch_size = pick(opts.batch_size, sec, "batch_size",
                             std::size_t{32});
  double train_frac = pick(opts.train_frac, sec, "train_frac", 0.8);
  double val_frac = pick(opts.val_frac, sec, "val_frac", 0.1);

  std::uint64_t seed = opts.common.resolved_seed();
  std::vector<std::string> sources;
  sources.reserve(probs.row_ids.size());
  for (const auto& id : probs.row_ids)
    sources.push_back(id.substr(0, id.find('#')));
  SourceSplit split = split_by_source(sources, train_frac, val_frac, seed);

  RegressorModel model = init_regressor(rc, seed);
  RegressorTrainResult rr =
      train_regressor(model, probs.values, targets, split.train, split.val,
                      schedule, seed, &std::cout);

  Checkpoint ck = regressor_to_checkpoint(model);
  ck.meta["creator"] = "attriq train-reg";
  ck.meta["probs_digest"] = digest_of_file(probs_path);
  ck.meta["scores_digest"] = scores_digest;
  ck.meta["registry_digest"] = reg.digest;
  ck.meta["seed"] = std::to_string(seed);
  ck.meta["best_epoch"] = std::to_string(rr.best_epoch);
  ck.meta["best_val_mse"] = std::to_string(rr.best_val_mse);
  if (fs::path(out).has_parent_path())
    fs::create_directories(fs::path(out).parent_path());
  save_checkpoint(ck, out);

  nlohmann::json resolved;
  resolved["command"] = "train-reg";
  resolved["probs"] = probs_path;
  resolved["registry"] = registry_path;
  if (!scores_path.empty()) resolved["scores"] = scores_path;
  if (!manifest_path.empty()) resolved["manifest"] = manifest_path;
  resolved["out"] = out;
  resolved["seed"] = seed;
  resolved["regressor"] = rc.to_json();
  resolved["epochs"] = schedule.epochs;
  resolved["lr_max"] = schedule.lr_max;
  resolved["train_frac"] = train_frac;
  resolved["val_frac"] = val_frac;
  write_snapshot(resolved, out);

  std::cout << "train-reg: " << probs.row_ids.size() << " records, best val "
            << rr.best_val_mse << " at epoch " << rr.best_epoch << " -> "
            << out << "\n";
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalOpts {
  CommonOpts common;
  std::optional<std::string> task;  // dist | score
  std::optional<std::string> manifest;
  std::optional<std::string> registry;
  std::optional<std::string> checkpoint;    // distortion model
  std::optional<std::string> predictions;   // distortion predictions CSV
  std::optional<std::string> probs;         // attribute probabilities CSV
  std::optional<std::string> regressor;     // regressor checkpoint
  std::optional<std::string> scores;        // scores CSV (else manifest)
  std::optional<std::string> split;         // all | train | val | test
  std::optional<double> train_frac, val_frac;
  std::optional<std::string> out;  // report JSON
};

inline std::vector<std::size_t> select_split(const std::vector<std::string>& row_ids,
                                             const std::string& which,
                                             double train_frac, double val_frac,
                                             std::uint64_t seed) {
  if (which == "all") {
    std::vector<std::size_t> idx(row_ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  std::vector<std::string> sources;
  sources.reserve(row_ids.size());
  for (const auto& id : row_ids)
    sources.push_back(id.substr(0, id.find('#')));
  SourceSplit split = split_by_source(sources, train_frac, val_frac, seed);
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  throw ConfigError("eval: unknown split '" + which + "'");
}

inline int cmd_eval(const EvalOpts& opts) {
  nlohmann::json sec = section_of(opts.common.config, "eval");
  check_section_keys(sec, {"task", "manifest", "registry", "checkpoint",
                           "predictions", "probs", "regressor", "scores",
                           "split", "train_frac", "val_frac", "out"},
                     "eval");
  std::string task = pick(opts.task, sec, "task", std::string("dist"));
  std::string manifest_path = pick(opts.manifest, sec, "manifest", std::string());
  std::string out = pick(opts.out, sec, "out", std::string());
  std::string split_name = pick(opts.split, sec, "split", std::string("all"));
  double train_frac = pick(opts.train_frac, sec, "train_frac", 0.8);
  double val_frac = pick(opts.val_frac, sec, "val_frac", 0.1);
  std::uint64_t seed = opts.common.resolved_seed();

  MetricReport report;
  nlohmann::json resolved;
  resolved["command"] = "eval";
  resolved["task"] = task;
  resolved["split"] = split_name;
  resolved["seed"] = seed;

  if (task == "dist") {
    if (manifest_path.empty()) throw ConfigError("eval dist: manifest required");
    ManifestFile mf = load_manifest(manifest_path);
    std::string manifest_digest = digest_of_file(manifest_path);
    std::string pred_path = pick(opts.predictions, sec, "predictions",
                                 std::string());
    Tensor preds;
    std::vector<std::string> dist_ids;
    std::vector<std::string> row_ids;
    for (const auto& rec : mf.records) row_ids.push_back(rec.record_id());

    if (!pred_path.empty()) {
      CsvTable t = load_csv_table(pred_path, kDistPredFormat);
      if (t.meta.count("manifest_digest") &&
          t.meta.at("manifest_digest") != manifest_digest)
        throw ConfigError("predictions bound to manifest " +
                          t.meta.at("manifest_digest") +
                          ", loaded manifest is " + manifest_digest);
      if (t.row_ids != row_ids)
        throw ConfigError("prediction records do not match the manifest");
      preds = t.values;
      dist_ids = t.columns;
      report.provenance["predictions_digest"] = digest_of_file(pred_path);
    } else {
      std::string registry_path = pick(opts.registry, sec, "registry",
                                       std::string());
      std::string ckpt_path = pick(opts.checkpoint, sec, "checkpoint",
                                   std::string());
      if (registry_path.empty() || ckpt_path.empty())
        throw ConfigError(
            "eval dist: either predictions or checkpoint+registry required");
      AttributeRegistry reg = load_registry(registry_path);
      Checkpoint ck = load_checkpoint(ckpt_path);
      require_registry_binding(ck, reg);
      DistortionModel model = distortion_model_from_checkpoint(ck);
      preds = predict_distortion_matrix(
          mf.records, model, reg,
          opts.common.resolved_data_root(manifest_path),
          opts.common.resolved_workers());
      dist_ids = reg.distortion_ids();
      report.provenance["checkpoint_digest"] = digest_of_file(ckpt_path);
      report.provenance["registry_digest"] = reg.digest;
    }

    Tensor gt = ground_truth_matrix(mf.records, dist_ids);
    std::vector<std::size_t> rows =
        select_split(row_ids, split_name, train_frac, val_frac, seed);
    if (rows.empty()) throw DataError("eval dist: selected split is empty");
    Tensor p = Tensor::zeros({rows.size(), dist_ids.size()});
    Tensor g = Tensor::zeros({rows.size(), dist_ids.size()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t d = 0; d < dist_ids.size(); ++d) {
        p.at(i, d) = preds.at(rows[i], d);
        g.at(i, d) = gt.at(rows[i], d);
      }
    IntervalScheme scheme(mf.header.level_count);
    report.has_distortion_metrics = true;
    report.accuracy = interval_accuracy(p, g, scheme);
    report.rmse = strength_rmse(p, g);
    report.record_count = rows.size();
    report.cell_count = p.size();
    report.provenance["manifest_digest"] = manifest_digest;
  } else if (task == "score") {
    std::string probs_path = pick(opts.probs, sec, "probs", std::string());
    std::string reg_ckpt_path = pick(opts.regressor, sec, "regressor",
                                     std::string());
    std::string scores_path = pick(opts.scores, sec, "scores", std::string());
    if (probs_path.empty() || reg_ckpt_path.empty())
      throw ConfigError("eval score: probs and regressor required");
    if (scores_path.empty() && manifest_path.empty())
      throw ConfigError("eval score: scores or manifest required");

    CsvTable probs = load_csv_table(probs_path, kProbMatrixFormat);
    Checkpoint rck = load_checkpoint(reg_ckpt_path);
    RegressorModel model = regressor_from_checkpoint(rck);
    if (model.config.input_dim != probs.columns.size())
      throw ConfigError("regressor input_dim " +
                        std::to_string(model.config.input_dim) +
                        " does not match probability matrix with " +
                        std::to_string(probs.columns.size()) + " columns");
    auto it = rck.meta.find("registry_digest");
    if (it != rck.meta.end() && probs.meta.count("registry_digest") &&
        probs.meta.at("registry_digest") != it->second)
      throw ConfigError("regressor bound to registry " + it->second +
                        ", probability matrix bound to " +
                        probs.meta.at("registry_digest"));

    std::vector<double> targets(probs.row_ids.size());
    if (!scores_path.empty()) {
      ScoreFile sf = load_scores(scores_path);
      if (sf.row_ids != probs.row_ids)
        throw ConfigError("scores records do not match the probability matrix");
      ScoreNormalizer norm(sf.range_lo, sf.range_hi, sf.higher_better);
      for (std::size_t i = 0; i < sf.raw.size(); ++i)
        targets[i] = norm.normalize(sf.raw[i]);
    } else {
      ManifestFile mf = load_manifest(manifest_path);
      std::map<std::string, double> by_id;
      for (const auto& rec : mf.records)
        if (rec.score) by_id[rec.record_id()] = *rec.score;
      for (std::size_t i = 0; i < probs.row_ids.size(); ++i) {
        auto f = by_id.find(probs.row_ids[i]);
        if (f == by_id.end())
          throw DataError("eval score: no score for record " +
                          probs.row_ids[i]);
        targets[i] = f->second;
      }
    }

    std::vector<std::size_t> rows =
        select_split(probs.row_ids, split_name, train_frac, val_frac, seed);
    if (rows.size() < 2)
      throw DataError("eval score: selected split has fewer than 2 records");
    std::vector<ScorePrediction> preds =
        predict_scores(model, probs.values, opts.common.resolved_workers());
    std::vector<double> x, y;
    for (std::size_t r : rows) {
      x.push_back(preds[r].raw);
      y.push_back(targets[r]);
    }
    report.has_score_metrics = true;
    report.plcc_value = plcc(x, y);
    report.srcc_value = srcc(x, y);
    report.record_count = rows.size();
    report.provenance["probs_digest"] = digest_of_file(probs_path);
    report.provenance["regressor_digest"] = digest_of_file(reg_ckpt_path);
  } else {
    throw ConfigError("eval: unknown task '" + task + "' (dist|score)");
  }

  std::cout << "eval " << task << " [" << split_name << "]: "
            << report.summary_line() << "\n";
  if (!out.empty()) {
    if (fs::path(out).has_parent_path())
      fs::create_directories(fs::path(out).parent_path());
    std::ofstream o(out);
    if (!o) throw DataError("cannot write report: " + out);
    o << report.to_json().dump(2) << "\n";
    write_snapshot(resolved, out);
  }
  return 0;
}

// ---- saliency -------------------------------------------------------------------

struct SaliencyOpts {
  CommonOpts common;
  std::optional<std::string> checkpoint;
  std::optional<std::string> registry;
  std::optional<std::string> manifest;
  std::optional<std::vector<std::string>> images;
  std::optional<std::string> distortion;
  std::optional<std::size_t> limit;
  std::optional<double> sigma, blend;
  std::optional<bool> csv;
  std::optional<std::string> out;
};

inline int cmd_saliency(const SaliencyOpts& opts) {
  nlohmann::json sec = section_of(opts.common.config, "saliency");
  check_section_keys(sec, {"checkpoint", "registry", "manifest", "images",
                           "distortion", "limit", "sigma", "blend", "csv",
                           "out"},
                     "saliency");
  std::string ckpt_path = pick(opts.checkpoint, sec, "checkpoint", std::string());
  std::string registry_path = pick(opts.registry, sec, "registry", std::string());
  std::string manifest_path = pick(opts.manifest, sec, "manifest", std::string());
  std::vector<std::string> images =
      pick(opts.images, sec, "images", std::vector<std::string>{});
  std::string distortion = pick(opts.distortion, sec, "distortion", std::string());
  std::size_t limit = pick(opts.limit, sec, "limit", std::size_t{4});
  double sigma = pick(opts.sigma, sec, "sigma", 1.0);
  double blend = pick(opts.blend, sec, "blend", 0.6);
  bool want_csv = pick(opts.csv, sec, "csv", false);
  std::string out = pick(opts.out, sec, "out", std::string());
  if (ckpt_path.empty() || registry_path.empty() || out.empty())
    throw ConfigError("saliency: checkpoint, registry and out are required");
  if (distortion.empty()) throw ConfigError("saliency: distortion required");
  if (manifest_path.empty() && images.empty())
    throw ConfigError("saliency: manifest or images required");

  AttributeRegistry reg = load_registry(registry_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  require_registry_binding(ck, reg);
  DistortionModel model = distortion_model_from_checkpoint(ck);

  struct Job {
    std::string name;
    std::string path;
  };
  std::vector<Job> jobs;
  if (!manifest_path.empty()) {
    ManifestFile mf = load_manifest(manifest_path);
    std::string data_root = opts.common.resolved_data_root(manifest_path);
    for (std::size_t i = 0; i < mf.records.size() && i < limit; ++i)
      jobs.push_back(
          {mf.records[i].record_id(),
           (fs::path(data_root) / mf.records[i].output_path).string()});
  }
  for (const auto& p : images)
    jobs.push_back({fs::path(p).stem().string(), p});

  fs::create_directories(out);
  SaliencyOptions so;
  so.smooth_sigma = sigma;
  nlohmann::json items = nlohmann::json::array();
  for (const auto& job : jobs) {
    Image img = read_png(job.path);
    if (img.channels == 1 && model.vit.config.channels == 3) {
      Image rgb = Image::create(img.height, img.width, 3);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = img.at(y, x, 0);
      img = std::move(rgb);
    }
    if (img.height != model.vit.config.image_size ||
        img.width != model.vit.config.image_size)
      img = crop_resize(img, model.vit.config.image_size);
    SaliencyMap sm = saliency_map(img, distortion, model, reg, so);
    std::string safe = job.name;
    for (auto& ch : safe)
      if (ch == '#' || ch == '/' || ch == '\\') ch = '_';
    std::string heat_path =
        (fs::path(out) / (safe + "__" + distortion + "_saliency.png")).string();
    std::string over_path =
        (fs::path(out) / (safe + "__" + distortion + "_overlay.png")).string();
    write_png(saliency_heatmap_image(sm), heat_path);
    write_png(saliency_overlay_image(img, sm, blend), over_path);
    if (want_csv)
      write_saliency_csv(
          sm, (fs::path(out) / (safe + "__" + distortion + ".csv")).string());
    if (sm.zero_gradient)
      std::cout << "saliency: warning: zero gradient for " << job.name << "\n";
    nlohmann::json item;
    item["record"] = job.name;
    item["heatmap"] = heat_path;
    item["overlay"] = over_path;
    item["zero_gradient"] = sm.zero_gradient;
    item["height"] = sm.height;
    item["width"] = sm.width;
    items.push_back(item);
  }

  nlohmann::json report;
  report["distortion"] = distortion;
  report["checkpoint_digest"] = digest_of_file(ckpt_path);
  report["registry_digest"] = reg.digest;
  report["items"] = items;
  {
    std::ofstream o(fs::path(out) / "saliency_report.json");
    if (!o) throw DataError("cannot write saliency report");
    o << report.dump(2) << "\n";
  }

  nlohmann::json resolved;
  resolved["command"] = "saliency";
  resolved["checkpoint"] = ckpt_path;
  resolved["registry"] = registry_path;
  resolved["distortion"] = distortion;
  resolved["sigma"] = sigma;
  resolved["blend"] = blend;
  resolved["out"] = out;
  write_snapshot(resolved, out);

  std::cout << "saliency: " << items.size() << " maps for '" << distortion
            << "' -> " << out << "\n";
  return 0;
}

}  // namespace attriq::cli
