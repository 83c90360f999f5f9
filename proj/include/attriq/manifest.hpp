#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriq/distortions.hpp"
#include "attriq/errors.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

// One distorted variant: the applied list is ordered ground truth; any
// distortion absent from it has implicit strength 0.
struct ManifestRecord {
  std::string source_id;
  int variant_index = 0;
  std::string output_path;
  std::vector<DistortionSpec> applied;
  std::optional<double> score;
  std::string source_digest;

  std::string record_id() const {
    return source_id + "#" + std::to_string(variant_index);
  }
};

struct ManifestHeader {
  int version = 1;
  int level_count = 5;
  std::vector<std::string> distortions;
  std::map<std::string, std::string> meta;  // creator, seeds, digests, ...
};

namespace manifest_detail {

inline void validate_record(const ManifestRecord& rec, int level_count,
                            const std::string& where) {
  if (rec.source_id.empty())
    throw ParseError(where + ": empty source_id");
  if (rec.variant_index < 0)
    throw ParseError(where + ": negative variant_index");
  if (rec.applied.empty())
    throw ParseError(where + ": applied list is empty");
  std::set<std::string> seen;
  for (const auto& sp : rec.applied) {
    if (!seen.insert(sp.id).second)
      throw ParseError(where + ": duplicate distortion id '" + sp.id + "'");
    if (sp.level.level < 1 || sp.level.level > level_count)
      throw ParseError(where + ": level " + std::to_string(sp.level.level) +
                       " outside {1.." + std::to_string(level_count) + "}");
  }
  if (rec.score && (*rec.score < 0.0 || *rec.score > 1.0))
    throw ParseError(where + ": score outside [0,1]");
}

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::set<std::string>& allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ParseError(where + ": unknown field '" + it.key() + "'");
}

}  // namespace manifest_detail

// JSON Lines with a versioned header line; streamable and diffable.
inline void write_manifest(const std::vector<ManifestRecord>& records,
                           const ManifestHeader& header,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open manifest for writing: " + path);
  nlohmann::json h;
  h["format"] = "attriq-manifest";
  h["version"] = header.version;
  h["level_count"] = header.level_count;
  h["distortions"] = header.distortions;
  for (const auto& [k, v] : header.meta) h[k] = v;
  out << h.dump() << "\n";
  for (const auto& rec : records) {
    manifest_detail::validate_record(rec, header.level_count,
                                     "record " + rec.record_id());
    nlohmann::json j;
    j["source_id"] = rec.source_id;
    j["variant_index"] = rec.variant_index;
    j["output_path"] = rec.output_path;
    nlohmann::json applied = nlohmann::json::array();
    for (const auto& sp : rec.applied) {
      nlohmann::json a;
      a["distortion"] = sp.id;
      a["level"] = sp.level.level;
      a["strength"] = sp.level.strength();
      applied.push_back(a);
    }
    j["applied"] = applied;
    if (rec.score) j["score"] = *rec.score;
    if (!rec.source_digest.empty()) j["source_digest"] = rec.source_digest;
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("write failure on manifest: " + path);
}

struct ManifestFile {
  ManifestHeader header;
  std::vector<ManifestRecord> records;
};

inline ManifestFile load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + path);
  ManifestFile mf;
  std::string line;
  std::size_t line_no = 0;

  auto parse_line = [&](const std::string& text) -> nlohmann::json {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": malformed JSON line: " + e.what());
    }
  };

  if (!std::getline(in, line))
    throw ParseError(path + ":1: empty manifest (missing header line)");
  ++line_no;
  nlohmann::json h = parse_line(line);
  manifest_detail::reject_unknown_keys(
      h,
      {"format", "version", "level_count", "distortions", "creator",
       "master_seed", "repeats", "score_formula", "config_digest",
       "source_count"},
      path + ":1");
  if (!h.contains("format") || h["format"] != "attriq-manifest")
    throw ParseError(path + ":1: missing or wrong format tag");
  if (!h.contains("version") || !h["version"].is_number_integer())
    throw ParseError(path + ":1: missing version");
  mf.header.version = h["version"].get<int>();
  if (mf.header.version != 1)
    throw ParseError(path + ":1: unsupported manifest version " +
                     std::to_string(mf.header.version));
  mf.header.level_count = h.value("level_count", 5);
  if (mf.header.level_count < 1)
    throw ParseError(path + ":1: level_count must be >= 1");
  if (h.contains("distortions"))
    mf.header.distortions = h["distortions"].get<std::vector<std::string>>();
  for (auto it = h.begin(); it != h.end(); ++it)
    if (it.value().is_string() && it.key() != "format")
      mf.header.meta[it.key()] = it.value().get<std::string>();

  std::set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j = parse_line(line);
    manifest_detail::reject_unknown_keys(
        j,
        {"source_id", "variant_index", "output_path", "applied", "score",
         "source_digest"},
        where);
    ManifestRecord rec;
    try {
      rec.source_id = j.at("source_id").get<std::string>();
      rec.variant_index = j.at("variant_index").get<int>();
      rec.output_path = j.at("output_path").get<std::string>();
      for (const auto& a : j.at("applied")) {
        manifest_detail::reject_unknown_keys(
            a, {"distortion", "level", "strength"}, where);
        DistortionSpec sp;
        sp.id = a.at("distortion").get<std::string>();
        int level = a.at("level").get<int>();
        double strength = a.at("strength").get<double>();
        sp.level = StrengthLevel(level, mf.header.level_count);
        if (strength != sp.level.strength())
          throw ParseError(where + ": strength " + std::to_string(strength) +
                           " is not level/" +
                           std::to_string(mf.header.level_count) +
                           " for level " + std::to_string(level));
        rec.applied.push_back(sp);
      }
      if (j.contains("score")) rec.score = j["score"].get<double>();
      if (j.contains("source_digest"))
        rec.source_digest = j["source_digest"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    manifest_detail::validate_record(rec, mf.header.level_count, where);
    if (!seen_ids.insert(rec.record_id()).second)
      throw ParseError(where + ": duplicate record id " + rec.record_id());
    mf.records.push_back(std::move(rec));
  }
  return mf;
}

// Ground-truth strength matrix: rows follow record order, columns follow the
// given distortion order; absent distortions contribute 0.
inline Tensor ground_truth_matrix(const std::vector<ManifestRecord>& records,
                                  const std::vector<std::string>& distortions) {
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < distortions.size(); ++i)
    col[distortions[i]] = i;
  Tensor m = Tensor::zeros({records.size(), distortions.size()});
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (const auto& sp : records[r].applied) {
      auto it = col.find(sp.id);
      if (it == col.end())
        throw DataError("record " + records[r].record_id() +
                        " applies distortion '" + sp.id +
                        "' outside the evaluated set");
      m.at(r, it->second) = sp.level.strength();
    }
  }
  return m;
}

}  // namespace attriq
