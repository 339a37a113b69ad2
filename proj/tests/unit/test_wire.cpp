#include <string>
#include <vector>

#include "shf/random.hpp"
#include "shf/wire.hpp"
#include "support.hpp"

using namespace shf;
using namespace shf::wire;

namespace {

Frame random_frame(rng::Stream& r) {
  Frame f;
  f.msg_type = static_cast<MsgType>(static_cast<int>(r.uniform(0, 6)));
  f.device_id = static_cast<DeviceId>(r.next_u64());
  f.modality = static_cast<std::uint8_t>(r.next_u64());
  f.sequence = static_cast<std::uint32_t>(r.next_u64());
  f.device_timestamp_ns = r.next_u64();
  auto len = static_cast<std::size_t>(r.uniform(0, 64));
  if (r.uniform() < 0.01) len = static_cast<std::size_t>(r.uniform(0, 4096));
  f.payload.resize(len);
  for (auto& b : f.payload) b = static_cast<std::uint8_t>(r.next_u64());
  return f;
}

}  // namespace

TEST_CASE("crc32 check value matches an independent bitwise implementation") {
  const std::string text = "123456789";
  std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  CHECK(test::crc32_bitwise(bytes) == 0xCBF43926u);
  CHECK(crc32(bytes) == 0xCBF43926u);
  rng::Stream r(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(r.uniform(0, 300)));
    for (auto& b : buf) b = static_cast<std::uint8_t>(r.next_u64());
    CHECK(crc32(buf) == test::crc32_bitwise(buf));
  }
}

TEST_CASE("heartbeat layout") {
  Frame f;
  f.msg_type = MsgType::heartbeat;
  f.device_id = 1;
  auto bytes = encode_frame(f);
  REQUIRE(bytes.size() == 29);
  const std::vector<std::uint8_t> prefix{0x53, 0x48, 0x44, 0x46, 0x01, 0x02};
  CHECK(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 6) == prefix);
  CHECK(bytes[6] == 0x00);
  CHECK(bytes[7] == 0x01);
  CHECK(get_u32(bytes.data() + 21) == 0);
  CHECK(get_u32(bytes.data() + 25) == test::crc32_bitwise(std::span(bytes).first(25)));
}

TEST_CASE("sample with an 8-byte payload is 37 bytes") {
  Frame f;
  f.payload.assign(8, 0xAB);
  CHECK(encode_frame(f).size() == 37);
  CHECK(peek_frame_length(encode_frame(f)) == 37);
}

TEST_CASE("big-endian fields land at their offsets") {
  Frame f;
  f.msg_type = MsgType::timeresp;
  f.device_id = 0x1234;
  f.modality = 3;
  f.sequence = 0xA1B2C3D4u;
  f.device_timestamp_ns = 0x0102030405060708ull;
  f.payload = {9, 8, 7};
  auto b = encode_frame(f);
  CHECK(b[5] == 4);
  CHECK(b[6] == 0x12);
  CHECK(b[7] == 0x34);
  CHECK(b[8] == 3);
  CHECK(b[9] == 0xA1);
  CHECK(b[12] == 0xD4);
  CHECK(b[13] == 0x01);
  CHECK(b[20] == 0x08);
  CHECK(b[24] == 3);
  CHECK(b[25] == 9);
}

TEST_CASE("payload limit") {
  Frame f;
  f.payload.resize(kMaxPayload);
  CHECK_NOTHROW(encode_frame(f));
  f.payload.resize(kMaxPayload + 1);
  CHECK(test::error_code_of([&] { encode_frame(f); }) == Errc::payload_too_large);
}

TEST_CASE("round trip over 1e5 random frames") {
  rng::Stream r(20240611);
  std::vector<std::uint8_t> buf;
  int mismatches = 0;
  for (int i = 0; i < 100'000; ++i) {
    Frame f = random_frame(r);
    buf.clear();
    encode_frame_into(f, buf);
    if (decode_frame(buf) != f) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("every single-bit flip is detected") {
  rng::Stream r(77);
  for (int trial = 0; trial < 40; ++trial) {
    Frame f = random_frame(r);
    const auto clean = encode_frame(f);
    for (std::size_t bit = 0; bit < clean.size() * 8; ++bit) {
      auto b = clean;
      b[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      auto res = try_decode_frame(b);
      REQUIRE_FALSE(res.ok());
      // Flips in the magic, version or length fields surface as their own errors.
      if (bit / 8 >= 9 && bit / 8 < 21) CHECK(std::get<Errc>(res.value) == Errc::crc_mismatch);
      if (bit / 8 >= kHeaderSize) CHECK(std::get<Errc>(res.value) == Errc::crc_mismatch);
    }
  }
}

TEST_CASE("distinguishable decode errors") {
  Frame f;
  f.payload = {1, 2, 3, 4};
  auto good = encode_frame(f);

  auto bad = good;
  bad[0] = 'X';
  CHECK(test::error_code_of([&] { decode_frame(bad); }) == Errc::bad_magic);

  bad = good;
  bad[4] = 2;
  CHECK(test::error_code_of([&] { decode_frame(bad); }) == Errc::unsupported_version);

  for (std::size_t n = 0; n < good.size(); ++n) {
    auto code = test::error_code_of([&] { decode_frame(std::span(good).first(n)); });
    CHECK(code == Errc::truncated);
  }

  bad = good;
  put_u32(bad, 0);  // trailing bytes are ignored
  CHECK(decode_frame(bad) == f);

  bad = good;
  bad[21] = 0x7F;  // declared payload far beyond the limit
  CHECK(test::error_code_of([&] { decode_frame(bad); }) == Errc::payload_too_large);
}

TEST_CASE("decode is total over arbitrary bytes") {
  rng::Stream r(3);
  for (int i = 0; i < 20'000; ++i) {
    std::vector<std::uint8_t> b(static_cast<std::size_t>(r.uniform(0, 80)));
    for (auto& x : b) x = static_cast<std::uint8_t>(r.next_u64());
    if (r.uniform() < 0.5 && b.size() >= 5) {
      std::copy(kMagic.begin(), kMagic.end(), b.begin());
      b[4] = kVersion;
    }
    CHECK_NOTHROW(try_decode_frame(b));
  }
}
