#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriq/digest.hpp"
#include "attriq/errors.hpp"
#include "attriq/manifest.hpp"
#include "attriq/parallel.hpp"
#include "attriq/png_io.hpp"
#include "attriq/rng.hpp"

namespace attriq {

struct SourceEntry {
  std::string id;    // unique, derived from the file stem by the CLI
  std::string path;  // readable PNG, >= 16x16
};

struct GeneratorConfig {
  std::uint64_t master_seed = 0;
  int repeats = 10;
  std::vector<std::string> distortions;  // empty -> full supported set
  int level_count = 5;
  std::vector<SourceEntry> sources;
  std::string out_dir;
  bool write_images = true;  // false: plan + manifest only (statistics runs)
  bool synthetic_scores = false;  // score = 1 - mean applied strength
  std::size_t workers = 0;
};

struct RejectEntry {
  std::string source_id;
  std::string path;
  std::string reason;
};

struct GenerateResult {
  std::vector<ManifestRecord> records;
  std::vector<RejectEntry> rejects;
  std::string manifest_path;
  std::size_t images_written = 0;
};

namespace datagen_detail {

// K_I uniform on [1,|D|], then K_I distinct distortions in sampled order,
// each with an independent uniform level in {1..L}.
inline std::vector<DistortionSpec> plan_applied(
    RandomStream& rs, const std::vector<std::string>& distortions,
    int level_count) {
  std::size_t d = distortions.size();
  std::size_t k = 1 + static_cast<std::size_t>(rs.next_below(d));
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::vector<DistortionSpec> applied;
  applied.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rs.next_below(d - i));
    std::swap(order[i], order[j]);
    DistortionSpec sp;
    sp.id = distortions[order[i]];
    sp.level = StrengthLevel(1 + static_cast<int>(rs.next_below(
                                     static_cast<std::uint64_t>(level_count))),
                             level_count);
    applied.push_back(std::move(sp));
  }
  return applied;
}

inline double synthetic_score(const std::vector<DistortionSpec>& applied) {
  double sum = 0.0;
  for (const auto& sp : applied) sum += sp.level.strength();
  return 1.0 - sum / static_cast<double>(applied.size());
}

}  // namespace datagen_detail

// Materializes repeats x |sources| distorted variants plus a manifest whose
// bytes are a pure function of (config, source digests). Unreadable sources
// are skipped with a warning and land in <out_dir>/rejects.jsonl.
inline GenerateResult generate(const GeneratorConfig& config) {
  namespace fs = std::filesystem;
  if (config.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (config.level_count < 1) throw ConfigError("level_count must be >= 1");
  if (config.sources.empty()) throw ConfigError("no source images given");
  if (config.out_dir.empty()) throw ConfigError("out_dir is required");

  std::vector<std::string> distortions = config.distortions;
  if (distortions.empty())
    for (const auto& info : supported_distortions())
      distortions.push_back(info.id);
  std::set<std::string> uniq(distortions.begin(), distortions.end());
  if (uniq.size() != distortions.size())
    throw ConfigError("distortion list contains duplicates");
  for (const auto& id : distortions) find_distortion(id);

  std::vector<SourceEntry> sources = config.sources;
  std::sort(sources.begin(), sources.end(),
            [](const SourceEntry& a, const SourceEntry& b) {
              return a.id < b.id;
            });
  for (std::size_t i = 1; i < sources.size(); ++i)
    if (sources[i].id == sources[i - 1].id)
      throw ConfigError("duplicate source id: " + sources[i].id);

  fs::create_directories(config.out_dir);
  if (config.write_images)
    fs::create_directories(fs::path(config.out_dir) / "images");

  GenerateResult result;
  struct LoadedSource {
    SourceEntry entry;
    Image image;
    std::string digest;
  };
  std::vector<LoadedSource> loaded;
  for (const auto& src : sources) {
    try {
      LoadedSource ls;
      ls.entry = src;
      ls.image = read_png(src.path);
      ls.digest = digest_of_file(src.path);
      loaded.push_back(std::move(ls));
    } catch (const Error& e) {
      std::fprintf(stderr, "[datagen] warning: skipping source '%s': %s\n",
                   src.id.c_str(), e.what());
      result.rejects.push_back({src.id, src.path, e.what()});
    }
  }
  if (loaded.empty()) throw DataError("all source images were rejected");

  std::size_t n = loaded.size() * static_cast<std::size_t>(config.repeats);
  result.records.resize(n);
  std::atomic<std::size_t> written{0};

  parallel_shards(n, config.workers, [&](std::size_t b, std::size_t e,
                                         std::size_t) {
    for (std::size_t idx = b; idx < e; ++idx) {
      const LoadedSource& src = loaded[idx / config.repeats];
      int variant = static_cast<int>(idx % config.repeats);
      RandomStream rs = RandomStream::keyed(config.master_seed, src.entry.id,
                                            static_cast<std::uint64_t>(variant));
      ManifestRecord rec;
      rec.source_id = src.entry.id;
      rec.variant_index = variant;
      rec.source_digest = src.digest;
      rec.applied =
          datagen_detail::plan_applied(rs, distortions, config.level_count);
      rec.output_path =
          "images/" + src.entry.id + "__v" + std::to_string(variant) + ".png";
      if (config.synthetic_scores)
        rec.score = datagen_detail::synthetic_score(rec.applied);
      if (config.write_images) {
        Image out = apply_sequence(src.image, rec.applied, &rs);
        write_png(out, (fs::path(config.out_dir) / rec.output_path).string());
        written.fetch_add(1);
      }
      result.records[idx] = std::move(rec);
    }
  });
  result.images_written = written.load();

  // Records are already ordered by (source_id, variant_index): sources were
  // sorted above and variants fill ascending slots.
  ManifestHeader header;
  header.level_count = config.level_count;
  header.distortions = distortions;
  header.meta["creator"] = "attriq generate";
  header.meta["master_seed"] = std::to_string(config.master_seed);
  header.meta["repeats"] = std::to_string(config.repeats);
  header.meta["score_formula"] =
      config.synthetic_scores ? "one_minus_mean_applied_strength" : "none";
  header.meta["source_count"] = std::to_string(loaded.size());

  result.manifest_path = (fs::path(config.out_dir) / "manifest.jsonl").string();
  write_manifest(result.records, header, result.manifest_path);

  if (!result.rejects.empty()) {
    std::ofstream rej(fs::path(config.out_dir) / "rejects.jsonl",
                      std::ios::trunc);
    for (const auto& r : result.rejects) {
      nlohmann::json j;
      j["source_id"] = r.source_id;
      j["path"] = r.path;
      j["reason"] = r.reason;
      rej << j.dump() << "\n";
    }
  }
  return result;
}

}  // namespace attriq
