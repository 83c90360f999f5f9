#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "attriq/digest.hpp"
#include "attriq/errors.hpp"
#include "attriq/rng.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

// Deterministic stand-in for a frozen text encoder: a position-tagged
// token-hash feature bag projected to R^d and L2-normalized. Tokens are
// hashed together with their position so that inserting a word ("not")
// shifts every following token's contribution; without the position tag,
// every positive/negative sentence pair would differ by the same single
// token vector and all anchor differences would be collinear.
// Stable across runs and platforms: integer hashing plus IEEE arithmetic.
inline Tensor embed_text_toy(const std::string& sentence, std::size_t dim) {
  if (sentence.empty()) throw DataError("embed_text_toy: empty sentence");
  if (dim == 0) throw ConfigError("embed_text_toy: dim must be positive");
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : sentence) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  if (tokens.empty()) tokens.push_back(sentence);

  Tensor v = Tensor::zeros({dim});
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    std::uint64_t h = fnv1a64(tokens[pos]);
    RandomStream rs(detail::mix64(h ^ ((pos + 1) * 0x9e3779b97f4a7c15ull)));
    for (std::size_t j = 0; j < dim; ++j)
      v.data[j] += 2.0 * rs.next_unit() - 1.0;
  }
  double norm = 0.0;
  for (double x : v.data) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& x : v.data) x /= norm;
  return v;
}

// Binary table of externally computed anchor embeddings, keyed by the
// attribute sentence text:
//   magic "ATRQEMB1" | version u32 | dim u32 | count u32 |
//   per entry: id string, dim f64 positive, dim f64 negative |
//   fnv1a64 checksum over all entry payloads.
struct AnchorImportEntry {
  Tensor positive;
  Tensor negative;
};

using AnchorImportTable = std::map<std::string, AnchorImportEntry>;

namespace anchor_detail {
constexpr char kMagic[8] = {'A', 'T', 'R', 'Q', 'E', 'M', 'B', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace anchor_detail

inline void write_anchor_table(const AnchorImportTable& table, std::size_t dim,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open anchor table for writing: " + path);
  out.write(anchor_detail::kMagic, 8);
  auto put32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  put32(anchor_detail::kVersion);
  put32(static_cast<std::uint32_t>(dim));
  put32(static_cast<std::uint32_t>(table.size()));
  std::uint64_t checksum = 0xcbf29ce484222325ull;
  for (const auto& [id, entry] : table) {
    if (entry.positive.size() != dim || entry.negative.size() != dim)
      throw ShapeError("anchor entry '" + id + "' has dim " +
                       std::to_string(entry.positive.size()) + ", table dim " +
                       std::to_string(dim));
    put32(static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    out.write(reinterpret_cast<const char*>(entry.positive.data.data()),
              static_cast<std::streamsize>(dim * sizeof(double)));
    out.write(reinterpret_cast<const char*>(entry.negative.data.data()),
              static_cast<std::streamsize>(dim * sizeof(double)));
    checksum = fnv1a64(id.data(), id.size(), checksum);
    checksum = fnv1a64(entry.positive.data.data(), dim * sizeof(double),
                       checksum);
    checksum = fnv1a64(entry.negative.data.data(), dim * sizeof(double),
                       checksum);
  }
  out.write(reinterpret_cast<const char*>(&checksum), 8);
  if (!out) throw DataError("write failure on anchor table: " + path);
}

inline std::pair<AnchorImportTable, std::size_t> read_anchor_table(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open anchor table: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, anchor_detail::kMagic, 8) != 0)
    throw DataError("not an anchor table (bad magic): " + path);
  auto get32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw DataError("truncated anchor table: " + path);
    return v;
  };
  std::uint32_t version = get32();
  if (version != anchor_detail::kVersion)
    throw DataError("unsupported anchor table version " +
                    std::to_string(version) + " in " + path);
  std::size_t dim = get32();
  std::uint32_t count = get32();
  AnchorImportTable table;
  std::uint64_t checksum = 0xcbf29ce484222325ull;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t idlen = get32();
    if (idlen > (1u << 20))
      throw DataError("implausible id length in anchor table: " + path);
    std::string id(idlen, '\0');
    in.read(id.data(), idlen);
    AnchorImportEntry entry;
    entry.positive = Tensor::zeros({dim});
    entry.negative = Tensor::zeros({dim});
    in.read(reinterpret_cast<char*>(entry.positive.data.data()),
            static_cast<std::streamsize>(dim * sizeof(double)));
    in.read(reinterpret_cast<char*>(entry.negative.data.data()),
            static_cast<std::streamsize>(dim * sizeof(double)));
    if (!in) throw DataError("truncated anchor table: " + path);
    if (!entry.positive.all_finite() || !entry.negative.all_finite())
      throw DataError("non-finite anchor embedding for '" + id + "' in " +
                      path);
    checksum = fnv1a64(id.data(), id.size(), checksum);
    checksum = fnv1a64(entry.positive.data.data(), dim * sizeof(double),
                       checksum);
    checksum = fnv1a64(entry.negative.data.data(), dim * sizeof(double),
                       checksum);
    table.emplace(std::move(id), std::move(entry));
  }
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), 8);
  if (!in || stored != checksum)
    throw DataError("checksum mismatch in anchor table: " + path);
  return {std::move(table), dim};
}

}  // namespace attriq
