#include <fstream>

#include "shf/storage.hpp"
#include "shf/wire.hpp"
#include "support.hpp"

using namespace shf;
using namespace shf::storage;
namespace fs = std::filesystem;

namespace {

StoredRecord make_record(std::uint64_t t, std::uint32_t seq, std::size_t payload = 8) {
  wire::Frame f;
  f.device_id = 7;
  f.sequence = seq;
  f.device_timestamp_ns = t;
  f.payload.assign(payload, static_cast<std::uint8_t>(seq));
  return {t, wire::encode_frame(f)};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("append offsets") {
  test::TempDir dir("append");
  LogWriter w(dir.path());
  auto a = make_record(100, 0);
  auto b = make_record(200, 1);
  auto ra = w.append(a);
  auto rb = w.append(b);
  CHECK(ra.segment == 0);
  CHECK(ra.offset == kSegmentHeaderSize);
  CHECK(rb.offset == ra.offset + kRecordOverhead + a.frame_bytes.size());
  w.close();

  LogReader r(dir.path());
  CHECK(r.read(ra) == a);
  CHECK(r.read(rb) == b);
  CHECK(test::error_code_of([&] { r.read({0, ra.offset + 1}); }) == Errc::corrupt_segment);
  CHECK(test::error_code_of([&] { r.read({5, 0}); }) == Errc::out_of_range);
}

TEST_CASE("1e5 records survive a reopen") {
  test::TempDir dir("many");
  {
    LogWriter w(dir.path());
    for (std::uint32_t i = 0; i < 100'000; ++i) w.append(make_record(1000 + i, i, 0));
  }
  LogReader r(dir.path());
  auto all = r.read_all();
  REQUIRE(all.size() == 100'000);
  CHECK(all.front().receive_time_ns == 1000);
  CHECK(all.back().receive_time_ns == 1000 + 99'999);
  auto scan = integrity_scan(dir.path());
  CHECK(scan.records == 100'000);
  CHECK(scan.failure_count() == 0);
  CHECK(scan.torn_tails.empty());
}

TEST_CASE("rotation by size") {
  test::TempDir dir("rotate");
  RotationPolicy policy;
  policy.max_bytes = 1 << 20;
  std::uint64_t written = 0;
  std::uint64_t count = 0;
  {
    LogWriter w(dir.path(), policy);
    while (written < (3u << 20)) {
      auto rec = make_record(count, static_cast<std::uint32_t>(count), 4000);
      written += rec.frame_bytes.size() + kRecordOverhead;
      w.append(rec);
      ++count;
    }
  }
  auto segs = list_segments(dir.path());
  CHECK(segs.size() >= 3);
  std::uint64_t total = 0;
  for (const auto& s : segs) {
    auto bytes = read_file(s);
    CHECK(bytes.size() <= policy.max_bytes);
    auto parsed = parse_segment(bytes);
    REQUIRE(parsed.footer);
    CHECK(parsed.footer->count == parsed.records.size());
    CHECK(parsed.footer_matches);
    total += parsed.records.size();
  }
  CHECK(total == count);
}

TEST_CASE("rotation by time span") {
  test::TempDir dir("span");
  RotationPolicy policy;
  policy.max_span_ns = 10;
  {
    LogWriter w(dir.path(), policy);
    for (std::uint64_t t = 0; t < 35; ++t) w.append(make_record(t, static_cast<std::uint32_t>(t)));
  }
  CHECK(list_segments(dir.path()).size() == 4);
  CHECK(LogReader(dir.path()).read_all().size() == 35);
}

TEST_CASE("iterate ranges and determinism") {
  test::TempDir dir("iter");
  {
    LogWriter w(dir.path(), {4096, 3600 * kNanosPerSecond});
    for (std::uint32_t i = 0; i < 200; ++i) w.append(make_record(10 * i, i));
  }
  LogReader r(dir.path());
  CHECK(r.read_range(500, 500).empty());
  auto mid = r.read_range(500, 700);
  REQUIRE(mid.size() == 20);
  CHECK(mid.front().receive_time_ns == 500);
  CHECK(mid.back().receive_time_ns == 690);
  auto first = r.read_all();
  auto second = LogReader(dir.path()).read_all();
  CHECK(first == second);
  CHECK(first.size() == 200);
}

TEST_CASE("torn tail is truncated on recovery") {
  test::TempDir live("torn-live");
  test::TempDir crashed("torn-crash");
  std::vector<StoredRecord> recs;
  fs::path seg;
  std::vector<std::uint8_t> bytes;
  {
    LogWriter w(live.path());
    for (std::uint32_t i = 0; i < 50; ++i) {
      recs.push_back(make_record(i, i));
      w.append(recs.back());
    }
    w.flush();
    seg = list_segments(live.path()).front();
    bytes = read_file(seg);
  }
  // The writer dies partway through record 50.
  auto last = bytes.size() - (kRecordOverhead + recs.back().frame_bytes.size());
  bytes.resize(last + 17);
  write_bytes(crashed.path() / seg.filename(), bytes);

  auto scan = integrity_scan(crashed.path());
  REQUIRE(scan.torn_tails.size() == 1);
  CHECK(scan.torn_tails[0].offset == last);
  CHECK(scan.failure_count() == 0);
  CHECK(read_file(crashed.path() / seg.filename()).size() == bytes.size());  // scan does not mutate

  {
    LogWriter recovered(crashed.path());
    recovered.append(make_record(1000, 50));
  }
  auto after = integrity_scan(crashed.path());
  CHECK(after.torn_tails.empty());
  CHECK(after.failure_count() == 0);
  CHECK(after.sealed_segments == 2);
  auto all = LogReader(crashed.path()).read_all();
  REQUIRE(all.size() == 50);
  for (std::size_t i = 0; i < 49; ++i) CHECK(all[i] == recs[i]);
  CHECK(all.back().receive_time_ns == 1000);
}

TEST_CASE("a flipped bit is located and skipped") {
  test::TempDir dir("flip");
  std::vector<RecordRef> refs;
  {
    LogWriter w(dir.path());
    for (std::uint32_t i = 0; i < 20; ++i) refs.push_back(w.append(make_record(i, i)));
  }
  auto seg = list_segments(dir.path()).front();
  auto bytes = read_file(seg);
  bytes[refs[7].offset + 20] ^= 0x04;
  write_bytes(seg, bytes);

  auto scan = integrity_scan(dir.path());
  REQUIRE(scan.crc_failures.size() == 1);
  CHECK(scan.crc_failures[0].offset == refs[7].offset);
  CHECK(scan.records == 19);

  LogReader r(dir.path());
  auto all = r.read_all();
  CHECK(all.size() == 19);
  CHECK(r.corruption().size() == 1);
}

TEST_CASE("damaged header and empty directory") {
  test::TempDir dir("hdr");
  CHECK(integrity_scan(dir.path()).segments == 0);
  CHECK(LogReader(dir.path()).read_all().empty());
  {
    LogWriter w(dir.path());
    w.append(make_record(1, 0));
  }
  auto seg = list_segments(dir.path()).front();
  auto bytes = read_file(seg);
  bytes[1] = 'X';
  write_bytes(seg, bytes);
  auto scan = integrity_scan(dir.path());
  CHECK(scan.other.size() == 1);
  CHECK(scan.other[0].kind == "bad_header");
}
