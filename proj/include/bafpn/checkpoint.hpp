#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "bafpn/errors.hpp"
#include "bafpn/params.hpp"

namespace bafpn {

// Binary parameter container. Layout: magic "BAFP", u32 LE version (1),
// u32 LE entry count; per entry u32 LE name length, UTF-8 name, u8 dtype
// (0 = float32, 1 = float64), u8 rank, rank x u32 LE dims, then the values
// row-major little-endian.
struct CheckpointEntry {
  std::string name;
  std::uint8_t dtype = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> raw;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() {
  return 0;
}
template <>
constexpr std::uint8_t dtype_code<double>() {
  return 1;
}

namespace detail {

inline void append_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

template <typename T>
void append_value_le(std::vector<std::uint8_t>& out, T v) {
  if constexpr (sizeof(T) == 4) {
    append_le32(out, std::bit_cast<std::uint32_t>(v));
  } else {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    append_le32(out, static_cast<std::uint32_t>(bits & 0xffffffffull));
    append_le32(out, static_cast<std::uint32_t>(bits >> 32));
  }
}

template <typename T>
T read_value_le(const std::uint8_t* p) {
  if constexpr (sizeof(T) == 4) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<T>(bits);
  } else {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<T>(bits);
  }
}

}  // namespace detail

template <typename T>
Checkpoint registry_to_checkpoint(const ParamRegistry<T>& params) {
  Checkpoint ck;
  ck.entries.reserve(params.size());
  for (const auto& p : params) {
    CheckpointEntry e;
    e.name = p.name;
    e.dtype = dtype_code<T>();
    for (auto d : p.value.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.raw.reserve(p.value.data().size() * sizeof(T));
    for (T v : p.value.data()) detail::append_value_le(e.raw, v);
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

// Loads entries into an existing registry. Every entry must name a known
// parameter, and every parameter must be covered.
template <typename T>
void apply_checkpoint(const Checkpoint& ck, ParamRegistry<T>& params) {
  std::size_t applied = 0;
  for (const auto& e : ck.entries) {
    if (!params.contains(e.name)) {
      throw NameError("checkpoint entry '" + e.name + "' does not match any parameter");
    }
    auto& p = params.at(e.name);
    if (e.dtype != dtype_code<T>()) {
      throw ContractError("checkpoint entry '" + e.name + "' has dtype code " +
                          std::to_string(e.dtype) + ", registry holds " +
                          std::to_string(dtype_code<T>()));
    }
    Shape dims(e.dims.begin(), e.dims.end());
    if (dims != p.value.shape()) {
      throw ShapeError("checkpoint entry '" + e.name + "' has shape " + shape_str(dims) +
                       ", parameter has " + shape_str(p.value.shape()));
    }
    auto& dst = p.value.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = detail::read_value_le<T>(e.raw.data() + i * sizeof(T));
    }
    ++applied;
  }
  if (applied != params.size()) {
    for (const auto& p : params) {
      bool found = false;
      for (const auto& e : ck.entries) found = found || e.name == p.name;
      if (!found) throw NameError("checkpoint is missing parameter '" + p.name + "'");
    }
  }
}

}  // namespace bafpn
