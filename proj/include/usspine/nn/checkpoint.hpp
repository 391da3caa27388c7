#pragma once

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "usspine/nn/classifier_net.hpp"
#include "usspine/nn/detector_net.hpp"
#include "usspine/nn/optimizer.hpp"
#include "usspine/volume.hpp"

namespace usspine::nn {

// Layout: "VMCKPT1", u32 descriptor length, descriptor bytes, u64 parameter
// count, f32 parameters, then the optimizer state: u8 kind, u64 step,
// u32 epoch, f64 lr initial, f64 decay, u32 milestone count, u32 milestones, u32 warmup steps,
// f64 momentum, weight_decay, beta1, beta2, eps, u64 buffer length, f64 m[],
// u64 buffer length, f64 v[]. Everything little-endian.
inline constexpr std::array<char, 7> kCheckpointMagic{'V', 'M', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  std::string descriptor;
  std::vector<float> params;
  OptimizerState optimizer;
};

namespace detail {

inline void put_u64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_f64(std::vector<char>& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CorruptionError("checkpoint truncated");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() { return usspine::detail::get_u32(take(4)); }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  usspine::detail::put_u32(out, static_cast<std::uint32_t>(ck.descriptor.size()));
  out.insert(out.end(), ck.descriptor.begin(), ck.descriptor.end());
  detail::put_u64(out, ck.params.size());
  for (float f : ck.params) usspine::detail::put_f32(out, f);
  const auto& o = ck.optimizer;
  out.push_back(static_cast<char>(o.config.kind));
  detail::put_u64(out, o.step);
  usspine::detail::put_u32(out, static_cast<std::uint32_t>(o.epoch));
  detail::put_f64(out, o.config.schedule.initial);
  detail::put_f64(out, o.config.schedule.decay);
  usspine::detail::put_u32(out, static_cast<std::uint32_t>(o.config.schedule.milestones.size()));
  for (int m : o.config.schedule.milestones) usspine::detail::put_u32(out, static_cast<std::uint32_t>(m));
  usspine::detail::put_u32(out, static_cast<std::uint32_t>(o.config.schedule.warmup_steps));
  for (double d : {o.config.momentum, o.config.weight_decay, o.config.beta1, o.config.beta2, o.config.eps})
    detail::put_f64(out, d);
  for (const auto* buf : {&o.m, &o.v}) {
    detail::put_u64(out, buf->size());
    for (double d : *buf) detail::put_f64(out, d);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw FormatError("not a checkpoint: bad magic");
  detail::Reader r(bytes);
  r.take(kCheckpointMagic.size());
  Checkpoint ck;
  const auto dlen = r.u32();
  const auto* d = r.take(dlen);
  ck.descriptor.assign(reinterpret_cast<const char*>(d), dlen);
  const auto n = r.u64();
  if (n > bytes.size()) throw CorruptionError("checkpoint parameter count exceeds file size");
  ck.params.resize(n);
  for (auto& f : ck.params) f = r.f32();
  auto& o = ck.optimizer;
  const auto kind = r.u8();
  if (kind > 1) throw CorruptionError("unknown optimizer kind in checkpoint");
  o.config.kind = static_cast<OptimizerKind>(kind);
  o.step = r.u64();
  o.epoch = static_cast<int>(r.u32());
  o.config.schedule.initial = r.f64();
  o.config.schedule.decay = r.f64();
  const auto nm = r.u32();
  for (std::uint32_t i = 0; i < nm; ++i) o.config.schedule.milestones.push_back(static_cast<int>(r.u32()));
  o.config.schedule.warmup_steps = static_cast<int>(r.u32());
  o.config.momentum = r.f64();
  o.config.weight_decay = r.f64();
  o.config.beta1 = r.f64();
  o.config.beta2 = r.f64();
  o.config.eps = r.f64();
  for (auto* buf : {&o.m, &o.v}) {
    const auto len = r.u64();
    if (len > bytes.size()) throw CorruptionError("checkpoint buffer length exceeds file size");
    buf->resize(len);
    for (auto& v : *buf) v = r.f64();
  }
  if (!r.done()) throw CorruptionError("trailing bytes in checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  usspine::detail::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(usspine::detail::read_file(path));
}

template <typename Net>
Checkpoint make_checkpoint(const Net& net, const OptimizerState& opt) {
  Checkpoint ck;
  ck.descriptor = net.arch().descriptor();
  const auto p = net.params();
  ck.params.assign(p.begin(), p.end());
  ck.optimizer = opt;
  return ck;
}

inline DetectorNet<float> detector_from_checkpoint(const Checkpoint& ck) {
  DetectorNet<float> net(DetectorArch::parse(ck.descriptor));
  if (net.param_count() != ck.params.size()) throw CorruptionError("checkpoint parameter count does not match architecture");
  std::copy(ck.params.begin(), ck.params.end(), net.params().begin());
  return net;
}

inline ClassifierNet<float> classifier_from_checkpoint(const Checkpoint& ck) {
  ClassifierNet<float> net(ClassifierArch::parse(ck.descriptor));
  if (net.param_count() != ck.params.size()) throw CorruptionError("checkpoint parameter count does not match architecture");
  std::copy(ck.params.begin(), ck.params.end(), net.params().begin());
  return net;
}

}  // namespace usspine::nn
