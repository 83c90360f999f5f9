#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriq/digest.hpp"
#include "attriq/errors.hpp"
#include "attriq/tensor.hpp"
#include "attriq/text_embed.hpp"

namespace attriq {

// Positive/negative prompt pair for one visual attribute of a distortion,
// with its anchor embeddings. Entries marked "published" carry the upstream
// attribute wording; "authored" entries were written for this repo.
struct AttributeEntry {
  std::string text;
  std::string positive;
  std::string negative;
  std::string provenance;  // "published" | "authored"
  Tensor anchor_positive;
  Tensor anchor_negative;
};

struct DistortionAttributes {
  std::string distortion;
  std::vector<AttributeEntry> attributes;
};

// The text side of the model. One embedding provenance per registry:
// either every anchor is derived by the toy hash embedder from its sentence
// ("toy-hash") or every anchor was imported from an external table
// ("imported"); the two are never mixed.
struct AttributeRegistry {
  int version = 1;
  std::size_t dim = 64;
  std::size_t attrs_per_distortion = 5;
  std::string embedding_provenance = "toy-hash";
  std::vector<DistortionAttributes> distortions;
  std::string digest;  // digest of the backing file, set by load/save

  std::size_t total_attributes() const {
    return distortions.size() * attrs_per_distortion;
  }

  std::vector<std::string> distortion_ids() const {
    std::vector<std::string> ids;
    ids.reserve(distortions.size());
    for (const auto& d : distortions) ids.push_back(d.distortion);
    return ids;
  }

  // Column order for probability matrices: (distortion order, attribute order).
  std::vector<std::string> column_names() const {
    std::vector<std::string> cols;
    cols.reserve(total_attributes());
    for (const auto& d : distortions)
      for (std::size_t k = 0; k < d.attributes.size(); ++k)
        cols.push_back(d.distortion + ":" + std::to_string(k));
    return cols;
  }

  const DistortionAttributes& find(const std::string& id) const {
    for (const auto& d : distortions)
      if (d.distortion == id) return d;
    throw UnknownDistortion("distortion '" + id + "' not in registry");
  }
};

// Template assembly. An attribute that is already phrased as a full
// "There is ..." sentence is used verbatim; otherwise it is wrapped in the
// prompt template. The negative form inserts "not" after "There is".
inline std::string make_positive_sentence(const std::string& text) {
  if (text.rfind("There is ", 0) == 0) return text;
  return "There is " + text + " in the photo.";
}

inline std::string make_negative_sentence(const std::string& text) {
  std::string pos = make_positive_sentence(text);
  return "There is not " + pos.substr(9);
}

namespace registry_detail {

inline void validate_sentence_pair(const AttributeEntry& e,
                                   const std::string& where) {
  if (e.positive.rfind("There is ", 0) != 0)
    throw ParseError(where + ": positive sentence must start with 'There is '");
  std::string expected_neg = "There is not " + e.positive.substr(9);
  if (e.negative != expected_neg)
    throw ParseError(where +
                     ": negative sentence must differ from the positive only "
                     "by the negation; expected '" +
                     expected_neg + "'");
}

inline void attach_toy_anchors(AttributeRegistry& reg) {
  for (auto& d : reg.distortions)
    for (auto& a : d.attributes) {
      a.anchor_positive = embed_text_toy(a.positive, reg.dim);
      a.anchor_negative = embed_text_toy(a.negative, reg.dim);
    }
}

inline void validate_registry(const AttributeRegistry& reg) {
  if (reg.distortions.empty())
    throw ParseError("registry holds no distortions");
  if (reg.attrs_per_distortion < 1)
    throw ParseError("attrs_per_distortion must be >= 1");
  if (reg.embedding_provenance != "toy-hash" &&
      reg.embedding_provenance != "imported")
    throw ParseError("unknown embedding provenance '" +
                     reg.embedding_provenance + "'");
  std::set<std::string> ids;
  for (const auto& d : reg.distortions) {
    if (d.distortion.empty()) throw ParseError("empty distortion id");
    if (!ids.insert(d.distortion).second)
      throw ParseError("duplicate distortion '" + d.distortion +
                       "' in registry");
    if (d.attributes.size() != reg.attrs_per_distortion)
      throw ParseError("distortion '" + d.distortion + "' has " +
                       std::to_string(d.attributes.size()) +
                       " attributes, registry declares " +
                       std::to_string(reg.attrs_per_distortion));
    for (std::size_t k = 0; k < d.attributes.size(); ++k) {
      const auto& a = d.attributes[k];
      std::string where = d.distortion + "[" + std::to_string(k) + "]";
      if (a.text.empty()) throw ParseError(where + ": empty attribute text");
      if (a.provenance != "published" && a.provenance != "authored")
        throw ParseError(where + ": unknown provenance '" + a.provenance +
                         "'");
      validate_sentence_pair(a, where);
      if (a.anchor_positive.size() != reg.dim ||
          a.anchor_negative.size() != reg.dim)
        throw ParseError(where + ": anchor dim mismatch vs registry dim " +
                         std::to_string(reg.dim));
      if (!a.anchor_positive.all_finite() || !a.anchor_negative.all_finite())
        throw ParseError(where + ": non-finite anchor embedding");
    }
  }
}

}  // namespace registry_detail

inline void save_registry(const AttributeRegistry& reg,
                          const std::string& path) {
  nlohmann::json j;
  j["format"] = "attriq-registry";
  j["version"] = reg.version;
  j["dim"] = reg.dim;
  j["attrs_per_distortion"] = reg.attrs_per_distortion;
  j["embedding_provenance"] = reg.embedding_provenance;
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : reg.distortions) {
    nlohmann::json dj;
    dj["distortion"] = d.distortion;
    nlohmann::json as = nlohmann::json::array();
    for (const auto& a : d.attributes) {
      nlohmann::json aj;
      aj["text"] = a.text;
      aj["positive"] = a.positive;
      aj["negative"] = a.negative;
      aj["provenance"] = a.provenance;
      if (reg.embedding_provenance == "imported") {
        aj["positive_embedding"] = a.anchor_positive.data;
        aj["negative_embedding"] = a.anchor_negative.data;
      }
      as.push_back(aj);
    }
    dj["attributes"] = as;
    ds.push_back(dj);
  }
  j["distortions"] = ds;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open registry for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failure on registry: " + path);
}

inline AttributeRegistry load_registry(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open registry: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": malformed registry JSON: " + e.what());
  }
  if (j.value("format", "") != "attriq-registry")
    throw ParseError(path + ": missing or wrong format tag");
  AttributeRegistry reg;
  try {
    reg.version = j.at("version").get<int>();
    if (reg.version != 1)
      throw ParseError(path + ": unsupported registry version");
    reg.dim = j.at("dim").get<std::size_t>();
    reg.attrs_per_distortion = j.at("attrs_per_distortion").get<std::size_t>();
    reg.embedding_provenance = j.at("embedding_provenance").get<std::string>();
    for (const auto& dj : j.at("distortions")) {
      DistortionAttributes d;
      d.distortion = dj.at("distortion").get<std::string>();
      for (const auto& aj : dj.at("attributes")) {
        AttributeEntry a;
        a.text = aj.at("text").get<std::string>();
        a.positive = aj.at("positive").get<std::string>();
        a.negative = aj.at("negative").get<std::string>();
        a.provenance = aj.at("provenance").get<std::string>();
        if (reg.embedding_provenance == "imported") {
          a.anchor_positive = Tensor::from(
              {reg.dim}, aj.at("positive_embedding").get<std::vector<double>>());
          a.anchor_negative = Tensor::from(
              {reg.dim}, aj.at("negative_embedding").get<std::vector<double>>());
        }
        d.attributes.push_back(std::move(a));
      }
      reg.distortions.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (reg.embedding_provenance == "toy-hash")
    registry_detail::attach_toy_anchors(reg);
  registry_detail::validate_registry(reg);
  reg.digest = digest_of_file(path);
  return reg;
}

// Attribute source file: ordered list of {distortion, attributes[{text,
// provenance}]}. Assembles prompt sentences and anchors.
inline AttributeRegistry build_registry(
    const std::string& attributes_path, const std::string& embedding_source,
    std::size_t dim, const std::vector<std::string>& subset = {}) {
  std::ifstream in(attributes_path, std::ios::binary);
  if (!in) throw DataError("cannot open attribute file: " + attributes_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(attributes_path + ": malformed JSON: " + e.what());
  }
  if (j.value("format", "") != "attriq-attributes")
    throw ParseError(attributes_path + ": missing or wrong format tag");

  AttributeRegistry reg;
  reg.dim = dim;
  std::map<std::string, DistortionAttributes> by_id;
  std::vector<std::string> order;
  try {
    for (const auto& dj : j.at("distortions")) {
      DistortionAttributes d;
      d.distortion = dj.at("distortion").get<std::string>();
      for (const auto& aj : dj.at("attributes")) {
        AttributeEntry a;
        a.text = aj.at("text").get<std::string>();
        a.provenance = aj.value("provenance", "authored");
        a.positive = make_positive_sentence(a.text);
        a.negative = make_negative_sentence(a.text);
        d.attributes.push_back(std::move(a));
      }
      order.push_back(d.distortion);
      by_id.emplace(d.distortion, std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(attributes_path + ": " + e.what());
  }
  if (order.empty()) throw ParseError(attributes_path + ": no distortions");

  const std::vector<std::string>& wanted = subset.empty() ? order : subset;
  for (const auto& id : wanted) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ConfigError("attribute file has no entry for distortion '" + id +
                        "'");
    reg.distortions.push_back(it->second);
  }
  reg.attrs_per_distortion = reg.distortions.front().attributes.size();

  if (embedding_source == "toy") {
    reg.embedding_provenance = "toy-hash";
    registry_detail::attach_toy_anchors(reg);
  } else {
    reg.embedding_provenance = "imported";
    auto [table, table_dim] = read_anchor_table(embedding_source);
    if (table_dim != dim)
      throw ConfigError("anchor table dim " + std::to_string(table_dim) +
                        " does not match requested dim " + std::to_string(dim));
    for (auto& d : reg.distortions)
      for (auto& a : d.attributes) {
        auto it = table.find(a.positive);
        if (it == table.end())
          throw ConfigError("anchor table lacks entry for sentence: " +
                            a.positive);
        a.anchor_positive = it->second.positive;
        a.anchor_negative = it->second.negative;
      }
  }
  registry_detail::validate_registry(reg);
  return reg;
}

}  // namespace attriq
