#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "usspine/error.hpp"
#include "usspine/types.hpp"

namespace usspine {

// Ordered stack of transverse slices along the scan direction.
class Volume {
 public:
  Volume() = default;
  Volume(std::vector<Slice> slices, float spacing_z_mm, float spacing_xy_mm)
      : slices_(std::move(slices)), spacing_z_(spacing_z_mm), spacing_xy_(spacing_xy_mm) {
    if (slices_.empty()) throw ValidationError("volume must contain at least one slice");
    for (const auto& s : slices_) {
      if (s.width() != slices_.front().width() || s.height() != slices_.front().height())
        throw ValidationError("all slices of a volume must share dimensions");
    }
  }

  int width() const { return slices_.empty() ? 0 : slices_.front().width(); }
  int height() const { return slices_.empty() ? 0 : slices_.front().height(); }
  int size() const { return static_cast<int>(slices_.size()); }
  bool empty() const { return slices_.empty(); }
  float spacing_z() const { return spacing_z_; }
  float spacing_xy() const { return spacing_xy_; }

  const Slice& operator[](int k) const { return slices_.at(static_cast<std::size_t>(k)); }
  const std::vector<Slice>& slices() const { return slices_; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  std::vector<Slice> slices_;
  float spacing_z_ = 1.0f;
  float spacing_xy_ = 1.0f;
};

inline constexpr std::array<char, 6> kVolumeMagic{'V', 'M', 'V', 'O', 'L', '1'};
inline constexpr std::size_t kVolumeHeaderBytes = 6 + 3 * 4 + 2 * 4;

namespace detail {

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::vector<char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::vector<char> encode_volume(const Volume& volume) {
  if (volume.empty()) throw ValidationError("cannot encode an empty volume");
  const std::size_t plane = static_cast<std::size_t>(volume.width()) * volume.height();
  std::vector<char> out(kVolumeMagic.begin(), kVolumeMagic.end());
  out.reserve(kVolumeHeaderBytes + plane * volume.size());
  detail::put_u32(out, static_cast<std::uint32_t>(volume.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(volume.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(volume.size()));
  detail::put_f32(out, volume.spacing_z());
  detail::put_f32(out, volume.spacing_xy());
  for (const auto& s : volume.slices()) {
    if (s.width() != volume.width() || s.height() != volume.height())
      throw ValidationError("slice dimensions differ from volume dimensions");
    const auto px = s.pixels();
    out.insert(out.end(), reinterpret_cast<const char*>(px.data()),
               reinterpret_cast<const char*>(px.data()) + px.size());
  }
  return out;
}

inline Volume decode_volume(const std::vector<char>& bytes) {
  if (bytes.size() < kVolumeMagic.size() ||
      std::memcmp(bytes.data(), kVolumeMagic.data(), kVolumeMagic.size()) != 0)
    throw FormatError("not a volume file: bad magic");
  if (bytes.size() < kVolumeHeaderBytes) throw CorruptionError("volume header truncated");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kVolumeMagic.size();
  const std::uint32_t w = detail::get_u32(p);
  const std::uint32_t h = detail::get_u32(p + 4);
  const std::uint32_t n = detail::get_u32(p + 8);
  const float sz = detail::get_f32(p + 12);
  const float sxy = detail::get_f32(p + 16);
  if (w == 0 || h == 0 || n == 0) throw CorruptionError("volume header has a zero dimension");
  const std::uint64_t plane = static_cast<std::uint64_t>(w) * h;
  const std::uint64_t expected = kVolumeHeaderBytes + plane * n;
  if (bytes.size() < expected)
    throw CorruptionError("volume payload truncated: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
  if (bytes.size() > expected) throw CorruptionError("trailing bytes after volume payload");
  std::vector<Slice> slices;
  slices.reserve(n);
  const auto* payload = reinterpret_cast<const std::uint8_t*>(bytes.data()) + kVolumeHeaderBytes;
  for (std::uint32_t k = 0; k < n; ++k) {
    std::vector<std::uint8_t> px(payload + k * plane, payload + (k + 1) * plane);
    slices.emplace_back(static_cast<int>(w), static_cast<int>(h), std::move(px));
  }
  return Volume(std::move(slices), sz, sxy);
}

inline Volume read_volume(const std::filesystem::path& path) { return decode_volume(detail::read_file(path)); }

inline void write_volume(const Volume& volume, const std::filesystem::path& path) {
  detail::write_file(path, encode_volume(volume));
}

}  // namespace usspine
