// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Checkpoint layout (all integers little-endian):
//   "CSER" | u32 version | u32 param count
//   per parameter: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 data

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cocktailser/autodiff/tensor.hpp"

namespace cocktailser::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  template <typename U>
  U get() {
    CSER_CHECK(pos_ + sizeof(U) <= buf_.size(), "checkpoint: truncated file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n) {
    CSER_CHECK(pos_ + n <= buf_.size(), "checkpoint: truncated file");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out = "CSER";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    CSER_CHECK(e.name.size() <= 0xFFFF, "checkpoint: parameter name too long");
    CSER_CHECK(e.shape.size() <= 0xFF, "checkpoint: rank too large");
    CSER_CHECK(e.data.size() == numel(e.shape), "checkpoint: data/shape mismatch for ", e.name);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    out.push_back(static_cast<char>(e.shape.size()));
    for (int d : e.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float f : e.data) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::string& buf) {
  detail::Reader r(buf);
  CSER_CHECK(r.bytes(4) == "CSER", "checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  CSER_CHECK(version == kCheckpointVersion, "checkpoint: unsupported version ", version);
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.bytes(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    for (int k = 0; k < rank; ++k) e.shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
    e.data.resize(numel(e.shape));
    for (auto& f : e.data) f = std::bit_cast<float>(r.get<std::uint32_t>());
    entries.push_back(std::move(e));
  }
  CSER_CHECK(r.done(), "checkpoint: trailing bytes");
  return entries;
}

template <typename T>
std::vector<CheckpointEntry> snapshot(const ParameterSet<T>& params) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : params.all()) {
    CheckpointEntry e{p.name, p.tensor.shape(), {}};
    e.data.reserve(p.tensor.size());
    for (T v : p.tensor.data()) e.data.push_back(static_cast<float>(v));
    out.push_back(std::move(e));
  }
  return out;
}

/// Loads values into an existing parameter set; names and shapes must match.
template <typename T>
void restore(ParameterSet<T>& params, const std::vector<CheckpointEntry>& entries) {
  CSER_CHECK(entries.size() == params.all().size(), "checkpoint: expected ", params.all().size(),
             " parameters, found ", entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = params.all()[i];
    const auto& e = entries[i];
    CSER_CHECK(p.name == e.name, "checkpoint: parameter ", i, " is ", e.name, ", expected ", p.name);
    CSER_CHECK(p.tensor.shape() == e.shape, "checkpoint: shape mismatch for ", e.name, ": ",
               shape_str(e.shape), " vs ", shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(e.data[k]);
  }
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  CSER_CHECK(f.good(), "cannot open ", path, " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CSER_CHECK(f.good(), "write failed: ", path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CSER_CHECK(f.good(), "cannot open ", path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

template <typename T>
void save_checkpoint(const ParameterSet<T>& params, const std::string& path) {
  write_file(path, encode_checkpoint(snapshot(params)));
}

template <typename T>
void load_checkpoint(ParameterSet<T>& params, const std::string& path) {
  restore(params, decode_checkpoint(read_file(path)));
}

/// FNV-1a over the encoded checkpoint; equal digests mean equal f32 weights.
template <typename T>
std::uint64_t digest(const ParameterSet<T>& params) {
  const std::string bytes = encode_checkpoint(snapshot(params));
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cocktailser::ad
