#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "uav/core/digest.hpp"
#include "uav/core/param_store.hpp"

namespace uav {

// Layout (little-endian):
//   "UAVK" | u16 version | u32 entry count
//   per entry: u32 name length | name | u32 rank | u32 dims[rank] | f32 values
//   u32 CRC-32 of every preceding byte
inline constexpr char kCheckpointMagic[4] = {'U', 'A', 'V', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

inline std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& store) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, e] : store) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (const auto d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (const float v : e.tensor.data()) w.f32(v);
  }
  const auto crc = crc32_of(w.bytes());
  w.u32(crc);
  return w.take();
}

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IntegrityError(IntegrityError::Kind::truncated, "checkpoint: truncated payload");
  }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// True when the tensor table, read against the whole file, runs past its
/// end; separates a cut-off file from corrupted content once the CRC fails.
inline bool table_overruns(std::span<const std::uint8_t> bytes) {
  try {
    ByteReader r(bytes.subspan(6));
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      r.skip(r.u32());
      const auto rank = r.u32();
      if (rank == 0 || rank > 8) return false;
      std::uint64_t n = 1;
      for (std::uint32_t k = 0; k < rank; ++k) n = std::min<std::uint64_t>(n * r.u32(), bytes.size());
      r.skip(static_cast<std::size_t>(4 * n));
    }
    return r.remaining() < 4;
  } catch (const IntegrityError&) {
    return true;
  }
}

}  // namespace detail

/// Parses a checkpoint. Every entry is loaded as frozen; callers opt in to
/// training explicitly.
inline ParamStore deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  using Kind = IntegrityError::Kind;
  if (bytes.size() < 4 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != std::string_view(kCheckpointMagic, 4))
    throw IntegrityError(Kind::bad_magic, "checkpoint: bad magic (not a UAVK file)");
  if (bytes.size() < 4 + 2 + 4 + 4) throw IntegrityError(Kind::truncated, "checkpoint: file too short");
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader trailer(bytes.subspan(bytes.size() - 4));
  if (crc32_of(body) != trailer.u32()) {
    if (detail::table_overruns(bytes)) throw IntegrityError(Kind::truncated, "checkpoint: truncated payload");
    throw IntegrityError(Kind::checksum, "checkpoint: CRC mismatch");
  }
  detail::ByteReader header(bytes.subspan(4));
  if (const auto version = header.u16(); version != kCheckpointVersion)
    throw IntegrityError(Kind::unknown_version, "checkpoint: unknown format version " + std::to_string(version));

  detail::ByteReader r(body.subspan(6));
  const auto count = r.u32();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.str(r.u32());
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw IntegrityError(Kind::truncated, "checkpoint: implausible rank for '" + name + "'");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      n *= d;
    }
    r.need(4 * n);
    std::vector<float> values(n);
    for (auto& v : values) v = std::bit_cast<float>(r.u32());
    try {
      store.add(name, Tensor(std::move(shape), std::move(values)), false);
    } catch (const ValidationError& e) {
      throw IntegrityError(Kind::truncated, std::string("checkpoint: malformed entry: ") + e.what());
    }
  }
  if (r.remaining() != 0) throw IntegrityError(Kind::truncated, "checkpoint: trailing bytes after last entry");
  return store;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError(IntegrityError::Kind::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IntegrityError(IntegrityError::Kind::io, "write to '" + path.string() + "' failed");
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError(IntegrityError::Kind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) { write_bytes(path, serialize_checkpoint(store)); }

inline ParamStore load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_bytes(path)); }

}  // namespace uav
