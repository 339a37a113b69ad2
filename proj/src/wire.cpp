#include "shf/wire.hpp"

#include <zlib.h>

namespace shf::wire {

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed) {
  uLong crc = seed;
  // zlib takes uInt lengths; chunk to stay within range on large buffers.
  const std::uint8_t* p = bytes.data();
  std::size_t left = bytes.size();
  while (left > 0) {
    uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

std::uint64_t get_u64(const std::uint8_t* p) {
  return (std::uint64_t{get_u32(p)} << 32) | get_u32(p + 4);
}

void encode_frame_into(const Frame& f, std::vector<std::uint8_t>& out) {
  if (f.payload.size() > kMaxPayload) {
    throw Error(Errc::payload_too_large,
                "payload of " + std::to_string(f.payload.size()) + " bytes exceeds 2^20");
  }
  const std::size_t start = out.size();
  out.reserve(start + kHeaderSize + f.payload.size() + kTrailerSize);
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(f.msg_type));
  put_u16(out, f.device_id);
  out.push_back(f.modality);
  put_u32(out, f.sequence);
  put_u64(out, f.device_timestamp_ns);
  put_u32(out, static_cast<std::uint32_t>(f.payload.size()));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  put_u32(out, crc32(std::span(out).subspan(start)));
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  std::vector<std::uint8_t> out;
  encode_frame_into(frame, out);
  return out;
}

std::size_t peek_frame_length(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) return 0;
  return kHeaderSize + get_u32(bytes.data() + 21) + kTrailerSize;
}

DecodeResult try_decode_frame(std::span<const std::uint8_t> b) {
  if (b.size() < kMagic.size()) return {Errc::truncated};
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (b[i] != kMagic[i]) return {Errc::bad_magic};
  }
  if (b.size() < 5) return {Errc::truncated};
  if (b[4] != kVersion) return {Errc::unsupported_version};
  if (b.size() < kHeaderSize) return {Errc::truncated};
  const std::uint32_t payload_len = get_u32(b.data() + 21);
  if (payload_len > kMaxPayload) return {Errc::payload_too_large};
  const std::size_t total = kHeaderSize + payload_len + kTrailerSize;
  if (b.size() < total) return {Errc::truncated};
  const std::uint32_t expected = get_u32(b.data() + kHeaderSize + payload_len);
  if (crc32(b.first(kHeaderSize + payload_len)) != expected) return {Errc::crc_mismatch};

  Frame f;
  f.msg_type = static_cast<MsgType>(b[5]);
  f.device_id = get_u16(b.data() + 6);
  f.modality = b[8];
  f.sequence = get_u32(b.data() + 9);
  f.device_timestamp_ns = get_u64(b.data() + 13);
  f.payload.assign(b.begin() + kHeaderSize, b.begin() + kHeaderSize + payload_len);
  return {std::move(f)};
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  DecodeResult r = try_decode_frame(bytes);
  if (auto* err = std::get_if<Errc>(&r.value)) {
    throw Error(*err, "frame decode failed");
  }
  return std::get<Frame>(std::move(r.value));
}

std::string_view msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::hello: return "HELLO";
    case MsgType::sample: return "SAMPLE";
    case MsgType::heartbeat: return "HEARTBEAT";
    case MsgType::timereq: return "TIMEREQ";
    case MsgType::timeresp: return "TIMERESP";
    case MsgType::bye: return "BYE";
  }
  return "UNKNOWN";
}

}  // namespace shf::wire
