#pragma once

// Bit-exact framing for everything a device sends to the collector.
//
//   offset  size  field
//   0       4     magic 'S' 'H' 'D' 'F'
//   4       1     version (1)
//   5       1     msg_type
//   6       2     device_id            (big-endian)
//   8       1     modality
//   9       4     sequence             (big-endian)
//   13      8     device_timestamp_ns  (big-endian)
//   21      4     payload_len          (big-endian)
//   25      n     payload
//   25+n    4     crc32 over bytes [0, 25+n)  (big-endian, reflected 0x04C11DB7)

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "shf/common.hpp"

namespace shf::wire {

enum class MsgType : std::uint8_t {
  hello = 0,
  sample = 1,
  heartbeat = 2,
  timereq = 3,
  timeresp = 4,
  bye = 5,
};

constexpr std::array<std::uint8_t, 4> kMagic = {0x53, 0x48, 0x44, 0x46};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 25;
constexpr std::size_t kTrailerSize = 4;
constexpr std::uint32_t kMaxPayload = 1u << 20;

struct Frame {
  MsgType msg_type = MsgType::sample;
  DeviceId device_id = 0;
  std::uint8_t modality = 0;
  std::uint32_t sequence = 0;
  std::uint64_t device_timestamp_ns = 0;
  std::vector<std::uint8_t> payload;

  bool operator==(const Frame&) const = default;
};

/// Standard CRC-32 (as in zlib / IEEE 802.3).
std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed = 0);

std::vector<std::uint8_t> encode_frame(const Frame& frame);
void encode_frame_into(const Frame& frame, std::vector<std::uint8_t>& out);

/// Parses the frame at the start of `bytes`; trailing bytes are ignored.
/// Throws Error with bad_magic, unsupported_version, truncated, payload_too_large
/// or crc_mismatch.
Frame decode_frame(std::span<const std::uint8_t> bytes);

/// Non-throwing variant used on the collector hot path.
struct DecodeResult {
  std::variant<Frame, Errc> value;
  bool ok() const { return std::holds_alternative<Frame>(value); }
};
DecodeResult try_decode_frame(std::span<const std::uint8_t> bytes);

/// Total encoded length for a frame whose header is at the start of `bytes`,
/// or 0 if fewer than kHeaderSize bytes are available. Does not validate.
std::size_t peek_frame_length(std::span<const std::uint8_t> bytes);

std::string_view msg_type_name(MsgType t);

// Big-endian helpers shared by payload and storage codecs.
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint16_t get_u16(const std::uint8_t* p);
std::uint32_t get_u32(const std::uint8_t* p);
std::uint64_t get_u64(const std::uint8_t* p);

}  // namespace shf::wire
