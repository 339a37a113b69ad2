#pragma once

// Append-only segmented log of raw wire frames plus their receive stamps.
//
// Segment file `segment-<created_ns>.shdl`:
//
//   header (28 bytes)
//     0   4  magic "SHDL"
//     4   1  version (1)
//     5   3  zero
//     8   8  created_ns            (big-endian)
//     16  8  scenario_hash         (big-endian)
//     24  4  crc32 of bytes [0, 24)
//   record (repeated)
//     0   4  body_len = 8 + frame_len
//     4   8  receive_time_ns
//     12  n  frame bytes (verbatim wire frame)
//     12+n 4 crc32 of bytes [0, 12+n) of this record
//   footer (36 bytes, sealed segments only)
//     0   4  0xFFFFFFFF
//     4   4  magic "SHDE"
//     8   8  record count
//     16  8  first receive_time_ns (0 if empty)
//     24  8  last receive_time_ns  (0 if empty)
//     32  4  rolling crc32 over every record's bytes, in order
//   The footer's integrity comes from the rolling CRC plus count; a torn or
//   damaged footer makes the segment read as unsealed.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shf/common.hpp"

namespace shf::storage {

struct StoredRecord {
  std::uint64_t receive_time_ns = 0;
  std::vector<std::uint8_t> frame_bytes;

  bool operator==(const StoredRecord&) const = default;
};

/// Location of a record: segment index in creation order and byte offset.
struct RecordRef {
  std::uint32_t segment = 0;
  std::uint64_t offset = 0;

  auto operator<=>(const RecordRef&) const = default;
};

constexpr std::size_t kSegmentHeaderSize = 28;
constexpr std::size_t kRecordOverhead = 16;
constexpr std::size_t kFooterSize = 36;
constexpr std::uint32_t kFooterSentinel = 0xFFFFFFFFu;

struct RotationPolicy {
  std::uint64_t max_bytes = 256ULL << 20;
  Nanos max_span_ns = 3600 * kNanosPerSecond;
};

/// One open, unsealed segment. Not thread-safe: a single writer owns it.
class SegmentWriter {
 public:
  SegmentWriter(const std::filesystem::path& path, std::uint64_t created_ns,
                std::uint64_t scenario_hash, std::uint64_t max_bytes);
  ~SegmentWriter();
  SegmentWriter(const SegmentWriter&) = delete;
  SegmentWriter& operator=(const SegmentWriter&) = delete;

  /// Returns the record's byte offset. Throws segment_full when the record
  /// would push a non-empty segment past max_bytes, write_failure on IO error.
  std::uint64_t append(const StoredRecord& record);

  /// Writes the footer, flushes and closes. Idempotent.
  void seal();
  /// Pushes buffered bytes to the OS.
  void flush();

  std::uint64_t size() const { return size_; }
  std::uint64_t record_count() const { return count_; }
  std::uint64_t created_ns() const { return created_ns_; }
  std::uint64_t first_receive_ns() const { return first_ts_; }
  const std::filesystem::path& path() const { return path_; }
  bool sealed() const { return fd_ < 0; }

 private:
  void write_all(std::span<const std::uint8_t> bytes);

  std::filesystem::path path_;
  int fd_ = -1;
  std::vector<std::uint8_t> buffer_;
  std::uint64_t created_ns_ = 0;
  std::uint64_t max_bytes_ = 0;
  std::uint64_t size_ = 0;
  std::uint64_t count_ = 0;
  std::uint64_t first_ts_ = 0;
  std::uint64_t last_ts_ = 0;
  std::uint32_t rolling_crc_ = 0;
};

/// Directory of segments with automatic rotation. Opening a directory that
/// already holds segments recovers it: a torn tail on the newest unsealed
/// segment is truncated and that segment is sealed before new appends.
class LogWriter {
 public:
  LogWriter(std::filesystem::path dir, RotationPolicy policy = {}, std::uint64_t scenario_hash = 0);
  ~LogWriter();
  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;

  RecordRef append(const StoredRecord& record);
  /// Seals the current segment; the next append opens a new one.
  void rotate();
  void flush();
  /// Seals everything. Further appends reopen a fresh segment.
  void close();

  std::uint32_t segment_count() const { return segment_count_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void open_segment(std::uint64_t created_ns);

  std::filesystem::path dir_;
  RotationPolicy policy_;
  std::uint64_t scenario_hash_;
  std::unique_ptr<SegmentWriter> current_;
  std::uint32_t segment_count_ = 0;
  std::uint64_t last_created_ = 0;
  bool have_last_created_ = false;
};

struct SegmentHeader {
  std::uint64_t created_ns = 0;
  std::uint64_t scenario_hash = 0;
};

struct SegmentFooter {
  std::uint64_t count = 0;
  std::uint64_t first_ts = 0;
  std::uint64_t last_ts = 0;
  std::uint32_t rolling_crc = 0;
};

/// Result of parsing one segment's bytes.
struct ParsedSegment {
  bool header_ok = false;
  SegmentHeader header;
  struct Entry {
    std::uint64_t offset;
    std::uint64_t receive_time_ns;
    std::size_t frame_begin;
    std::size_t frame_len;
  };
  std::vector<Entry> records;
  std::vector<std::uint64_t> crc_failures;  // offsets of damaged records
  std::optional<std::uint64_t> torn_tail;   // offset where an incomplete tail starts
  std::optional<SegmentFooter> footer;
  bool footer_matches = true;               // count and rolling CRC agree with records
};

ParsedSegment parse_segment(std::span<const std::uint8_t> bytes);

/// Segment files of a log directory, sorted by creation time.
std::vector<std::filesystem::path> list_segments(const std::filesystem::path& dir);
std::string segment_file_name(std::uint64_t created_ns);

struct CorruptionReport {
  std::uint32_t segment = 0;
  std::string file;
  std::uint64_t offset = 0;
  std::string kind;  // "crc_failure", "bad_header", "footer_mismatch"
};

/// Read side. Loads segment bytes on demand; iteration is a pure function of
/// the on-disk bytes.
class LogReader {
 public:
  explicit LogReader(std::filesystem::path dir);

  using Visitor = std::function<void(RecordRef, std::uint64_t receive_time_ns,
                                     std::span<const std::uint8_t> frame)>;

  /// Records with receive_time in [from, to), in append order. Damaged
  /// regions are skipped and reported in corruption().
  void iterate(std::uint64_t from, std::uint64_t to, const Visitor& visit);
  std::vector<StoredRecord> read_range(std::uint64_t from, std::uint64_t to);
  /// Every record.
  std::vector<StoredRecord> read_all();

  StoredRecord read(RecordRef ref);

  const std::vector<CorruptionReport>& corruption() const { return corruption_; }
  std::size_t segment_count() const { return segments_.size(); }
  const std::vector<std::filesystem::path>& segments() const { return segments_; }

 private:
  const std::vector<std::uint8_t>& bytes_of(std::uint32_t segment);

  std::filesystem::path dir_;
  std::vector<std::filesystem::path> segments_;
  std::vector<std::optional<std::vector<std::uint8_t>>> cache_;
  std::vector<CorruptionReport> corruption_;
};

struct ScanReport {
  std::size_t segments = 0;
  std::size_t sealed_segments = 0;
  std::size_t records = 0;
  std::vector<CorruptionReport> crc_failures;
  std::vector<CorruptionReport> torn_tails;
  std::vector<CorruptionReport> other;  // bad headers, footer mismatches

  std::size_t failure_count() const { return crc_failures.size() + other.size(); }
};

struct ScanOptions {
  /// Truncate torn tails in place (recovery). Off by default: scans are reads.
  bool truncate_torn_tails = false;
};

ScanReport integrity_scan(const std::filesystem::path& dir, ScanOptions options = {});

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace shf::storage
