// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint layout (all integers little-endian):
//   "TBRG" | u32 version | u32 entry count |
//   per entry: u16 name length | UTF-8 name | u8 dtype (0 = f64) | u8 rank |
//              u32 dims[rank] | row-major f64 payload
// Optimizer state is stored under the reserved "opt." prefix:
//   opt.step (rank 0), opt.m.<param>, opt.v.<param>.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "transbridge/core/param_store.hpp"

namespace tb {

inline constexpr char kCheckpointMagic[4] = {'T', 'B', 'R', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 0;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

using TensorMap = std::map<std::string, DenseArray>;

inline std::vector<std::uint8_t> encode_tensors(const TensorMap& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, arr] : entries) {
    if (name.size() > 0xFFFF) throw CheckpointError("checkpoint: name too long: " + name.substr(0, 64));
    if (arr.rank() > 0xFF) throw CheckpointError("checkpoint: rank too large for " + name);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF64);
    out.push_back(static_cast<std::uint8_t>(arr.rank()));
    for (std::size_t d : arr.dims()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : arr.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline TensorMap decode_tensors(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader in(bytes);
  if (in.get_string(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("checkpoint: bad magic");
  const auto version = in.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get_le<std::uint32_t>();
  TensorMap entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = in.get_le<std::uint16_t>();
    std::string name = in.get_string(len);
    const auto dtype = in.get_le<std::uint8_t>();
    if (dtype != kDtypeF64) throw CheckpointError("checkpoint: unsupported dtype code " + std::to_string(dtype));
    const auto rank = in.get_le<std::uint8_t>();
    Dims dims(rank);
    for (auto& d : dims) d = in.get_le<std::uint32_t>();
    std::vector<double> data(dims_product(dims));
    for (double& v : data) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
    if (!entries.emplace(name, DenseArray(std::move(dims), std::move(data))).second) {
      throw CheckpointError("checkpoint: duplicate entry " + name);
    }
  }
  if (!in.done()) throw CheckpointError("checkpoint: trailing bytes");
  return entries;
}

inline TensorMap store_to_tensors(const ParamStore& store) {
  TensorMap entries;
  for (const auto& [name, p] : store) {
    entries.emplace(name, p.value);
    entries.emplace("opt.m." + name, p.adam_m);
    entries.emplace("opt.v." + name, p.adam_v);
  }
  entries.emplace("opt.step", DenseArray::scalar(static_cast<double>(store.step())));
  return entries;
}

/// Copies checkpoint values into an already-constructed store. Every store
/// parameter must be present with matching dims.
inline void tensors_to_store(const TensorMap& entries, ParamStore& store) {
  for (auto& [name, p] : store) {
    auto find = [&](const std::string& key) -> const DenseArray& {
      auto it = entries.find(key);
      if (it == entries.end()) throw CheckpointError("checkpoint: missing entry " + key);
      if (it->second.dims() != p.value.dims()) {
        throw CheckpointError("checkpoint: entry " + key + " has dims " + dims_to_string(it->second.dims()) +
                              ", model expects " + dims_to_string(p.value.dims()));
      }
      return it->second;
    };
    p.value = find(name);
    p.adam_m = find("opt.m." + name);
    p.adam_v = find("opt.v." + name);
  }
  for (const auto& [name, arr] : entries) {
    if (name.rfind("opt.", 0) != 0 && !store.contains(name)) {
      throw CheckpointError("checkpoint: unexpected parameter " + name);
    }
  }
  auto it = entries.find("opt.step");
  store.set_step(it == entries.end() ? 0 : static_cast<std::uint64_t>(it->second.item()));
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::ios_base::failure("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::ios_base::failure("write failed: " + path);
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open for reading: " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
  write_bytes(path, encode_tensors(store_to_tensors(store)));
}

inline void load_checkpoint(const std::string& path, ParamStore& store) {
  tensors_to_store(decode_tensors(read_bytes(path)), store);
}

}  // namespace tb
