#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "attriq/digest.hpp"
#include "attriq/errors.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

// Versioned binary tensor archive:
//   magic (8B) | version u32 | meta table | tensor name table |
//   per tensor: dtype u8, ndim u32, dims u64..., payload bytes u64,
//               little-endian payload, fnv1a64 checksum of payload.
// Metadata is a string->string table used for artifact/digest binding.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> meta;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'A', 'T', 'R', 'Q', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeF32 = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated checkpoint file: " + path);
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const std::string& path) {
  auto n = read_pod<std::uint32_t>(in, path);
  if (n > (1u << 24)) throw DataError("implausible string length in " + path);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError("truncated checkpoint file: " + path);
  return s;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path,
                            bool as_f32 = false) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    write_string(out, k);
    write_string(out, v);
  }
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) write_string(out, name);
  for (const auto& [name, t] : ck.tensors) {
    write_pod<std::uint8_t>(out, as_f32 ? kDtypeF32 : kDtypeF64);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape)
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    if (as_f32) {
      std::vector<float> buf(t.data.begin(), t.data.end());
      std::uint64_t bytes = buf.size() * sizeof(float);
      write_pod<std::uint64_t>(out, bytes);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(bytes));
      write_pod<std::uint64_t>(out, fnv1a64(buf.data(), bytes));
    } else {
      std::uint64_t bytes = t.data.size() * sizeof(double);
      write_pod<std::uint64_t>(out, bytes);
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(bytes));
      write_pod<std::uint64_t>(out, fnv1a64(t.data.data(), bytes));
    }
  }
  if (!out) throw DataError("write failure on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + " in " + path);
  Checkpoint ck;
  auto meta_count = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = read_string(in, path);
    std::string v = read_string(in, path);
    ck.meta.emplace(std::move(k), std::move(v));
  }
  auto tensor_count = read_pod<std::uint32_t>(in, path);
  std::vector<std::string> names;
  names.reserve(tensor_count);
  for (std::uint32_t i = 0; i < tensor_count; ++i)
    names.push_back(read_string(in, path));
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    auto dtype = read_pod<std::uint8_t>(in, path);
    if (dtype != kDtypeF64 && dtype != kDtypeF32)
      throw DataError("unknown dtype in checkpoint tensor '" + names[i] +
                      "': " + std::to_string(dtype));
    auto ndim = read_pod<std::uint32_t>(in, path);
    if (ndim > 8) throw DataError("implausible rank in checkpoint: " + path);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape)
      d = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
    auto bytes = read_pod<std::uint64_t>(in, path);
    std::size_t count = Tensor::count(shape);
    std::size_t expect =
        count * (dtype == kDtypeF64 ? sizeof(double) : sizeof(float));
    if (bytes != expect)
      throw DataError("payload size mismatch for tensor '" + names[i] +
                      "' in " + path);
    Tensor t = Tensor::zeros(shape);
    std::uint64_t checksum = 0;
    if (dtype == kDtypeF64) {
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(bytes));
      if (!in) throw DataError("truncated checkpoint payload: " + path);
      checksum = fnv1a64(t.data.data(), bytes);
    } else {
      std::vector<float> buf(count);
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(bytes));
      if (!in) throw DataError("truncated checkpoint payload: " + path);
      checksum = fnv1a64(buf.data(), bytes);
      for (std::size_t j = 0; j < count; ++j)
        t.data[j] = static_cast<double>(buf[j]);
    }
    auto stored = read_pod<std::uint64_t>(in, path);
    if (stored != checksum)
      throw DataError("checksum mismatch for tensor '" + names[i] + "' in " +
                      path);
    ck.tensors.emplace_back(names[i], std::move(t));
  }
  return ck;
}

}  // namespace attriq
