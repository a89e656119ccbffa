#include "bafpn/checkpoint.hpp"

#include <cstdio>
#include <fstream>

namespace bafpn {

namespace {

constexpr std::uint8_t kMagic[4] = {0x42, 0x41, 0x46, 0x50};  // "BAFP"
constexpr std::uint32_t kVersion = 1;

std::uint32_t payload_width(std::uint8_t dtype, std::size_t offset) {
  if (dtype == 0) return 4;
  if (dtype == 1) return 8;
  throw FormatError("unknown dtype code " + std::to_string(dtype), offset);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw FormatError(std::string("truncated while reading ") + what, pos);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf[pos++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  detail::append_le32(out, kVersion);
  detail::append_le32(out, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    detail::append_le32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(e.dtype);
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) detail::append_le32(out, d);
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw ContractError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  r.need(4, "magic");
  for (int i = 0; i < 4; ++i) {
    if (buf[i] != kMagic[i]) throw FormatError("bad magic byte", static_cast<std::size_t>(i));
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.u32("entry count");

  Checkpoint ck;
  ck.entries.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    CheckpointEntry e;
    const std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "name");
    e.name.assign(reinterpret_cast<const char*>(buf.data() + r.pos), name_len);
    r.pos += name_len;
    const std::size_t dtype_at = r.pos;
    e.dtype = r.u8("dtype");
    const std::uint32_t width = payload_width(e.dtype, dtype_at);
    const std::uint8_t rank = r.u8("rank");
    std::uint64_t numel = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      e.dims.push_back(r.u32("dimension"));
      numel *= e.dims.back();
    }
    const std::uint64_t bytes = numel * width;
    r.need(bytes, "values");
    e.raw.assign(buf.begin() + static_cast<std::ptrdiff_t>(r.pos),
                 buf.begin() + static_cast<std::ptrdiff_t>(r.pos + bytes));
    r.pos += bytes;
    ck.entries.push_back(std::move(e));
  }
  if (r.pos != buf.size()) {
    throw FormatError("trailing bytes after last entry", r.pos);
  }
  return ck;
}

}  // namespace bafpn
