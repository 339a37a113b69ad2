#include "shf/storage.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "shf/wire.hpp"

namespace shf::storage {

namespace fs = std::filesystem;
using wire::get_u32;
using wire::get_u64;
using wire::put_u32;
using wire::put_u64;

namespace {

constexpr std::uint8_t kHeaderMagic[4] = {'S', 'H', 'D', 'L'};
constexpr std::uint8_t kFooterMagic[4] = {'S', 'H', 'D', 'E'};
constexpr std::uint8_t kLogVersion = 1;
constexpr std::size_t kFlushThreshold = 1 << 20;
constexpr std::uint64_t kMinBody = 8 + wire::kHeaderSize + wire::kTrailerSize;
constexpr std::uint64_t kMaxBody = 8 + wire::kHeaderSize + wire::kMaxPayload + wire::kTrailerSize;

std::vector<std::uint8_t> encode_header(std::uint64_t created_ns, std::uint64_t scenario_hash) {
  std::vector<std::uint8_t> h(kHeaderMagic, kHeaderMagic + 4);
  h.push_back(kLogVersion);
  h.insert(h.end(), 3, 0);
  put_u64(h, created_ns);
  put_u64(h, scenario_hash);
  put_u32(h, wire::crc32(h));
  return h;
}

bool parse_header(std::span<const std::uint8_t> b, SegmentHeader& out) {
  if (b.size() < kSegmentHeaderSize) return false;
  if (!std::equal(kHeaderMagic, kHeaderMagic + 4, b.begin())) return false;
  if (b[4] != kLogVersion) return false;
  if (wire::crc32(b.first(24)) != get_u32(b.data() + 24)) return false;
  out.created_ns = get_u64(b.data() + 8);
  out.scenario_hash = get_u64(b.data() + 16);
  return true;
}

/// Valid record starting at `pos`? Returns its total length or 0.
std::size_t valid_record_at(std::span<const std::uint8_t> b, std::size_t pos) {
  if (b.size() - pos < 4) return 0;
  std::uint32_t len = get_u32(b.data() + pos);
  if (len < kMinBody || len > kMaxBody) return 0;
  std::size_t total = 4 + std::size_t{len} + 4;
  if (b.size() - pos < total) return 0;
  if (wire::crc32(b.subspan(pos, 4 + len)) != get_u32(b.data() + pos + 4 + len)) return 0;
  return total;
}

bool footer_at(std::span<const std::uint8_t> b, std::size_t pos, SegmentFooter& out) {
  if (b.size() - pos != kFooterSize) return false;
  if (get_u32(b.data() + pos) != kFooterSentinel) return false;
  if (!std::equal(kFooterMagic, kFooterMagic + 4, b.begin() + static_cast<std::ptrdiff_t>(pos) + 4)) return false;
  out.count = get_u64(b.data() + pos + 8);
  out.first_ts = get_u64(b.data() + pos + 16);
  out.last_ts = get_u64(b.data() + pos + 24);
  out.rolling_crc = get_u32(b.data() + pos + 32);
  return true;
}

std::uint64_t parse_created(const fs::path& p) {
  std::string stem = p.stem().string();  // segment-<n>
  return std::stoull(stem.substr(std::strlen("segment-")));
}

}  // namespace

std::string segment_file_name(std::uint64_t created_ns) {
  return "segment-" + std::to_string(created_ns) + ".shdl";
}

std::vector<fs::path> list_segments(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("segment-", 0) == 0 && e.path().extension() == ".shdl") {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return parse_created(a) < parse_created(b);
  });
  return out;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Writing

SegmentWriter::SegmentWriter(const fs::path& path, std::uint64_t created_ns,
                             std::uint64_t scenario_hash, std::uint64_t max_bytes)
    : path_(path), created_ns_(created_ns), max_bytes_(max_bytes) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd_ < 0) {
    throw Error(Errc::write_failure, "cannot create " + path.string() + ": " + std::strerror(errno));
  }
  buffer_ = encode_header(created_ns, scenario_hash);
  size_ = buffer_.size();
}

SegmentWriter::~SegmentWriter() {
  try {
    seal();
  } catch (...) {
    // Destructors must not throw; the segment stays unsealed and recovery
    // handles it on next open.
  }
}

void SegmentWriter::write_all(std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    ssize_t n = ::write(fd_, bytes.data(), bytes.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::write_failure, path_.string() + ": " + std::strerror(errno));
    }
    bytes = bytes.subspan(static_cast<std::size_t>(n));
  }
}

void SegmentWriter::flush() {
  if (fd_ < 0 || buffer_.empty()) return;
  write_all(buffer_);
  buffer_.clear();
}

std::uint64_t SegmentWriter::append(const StoredRecord& r) {
  if (fd_ < 0) throw Error(Errc::write_failure, "append to sealed segment " + path_.string());
  const std::uint64_t body = 8 + r.frame_bytes.size();
  if (body > kMaxBody) throw Error(Errc::write_failure, "record larger than the maximum frame");
  const std::uint64_t total = 4 + body + 4;
  if (count_ > 0 && size_ + total + kFooterSize > max_bytes_) {
    throw Error(Errc::segment_full, path_.string());
  }
  const std::uint64_t offset = size_;
  const std::size_t start = buffer_.size();
  put_u32(buffer_, static_cast<std::uint32_t>(body));
  put_u64(buffer_, r.receive_time_ns);
  buffer_.insert(buffer_.end(), r.frame_bytes.begin(), r.frame_bytes.end());
  std::span<const std::uint8_t> rec(buffer_.data() + start, buffer_.size() - start);
  put_u32(buffer_, wire::crc32(rec));
  rolling_crc_ = wire::crc32(std::span<const std::uint8_t>(buffer_.data() + start, total), rolling_crc_);
  size_ += total;
  if (count_ == 0) first_ts_ = r.receive_time_ns;
  last_ts_ = r.receive_time_ns;
  ++count_;
  if (buffer_.size() >= kFlushThreshold) flush();
  return offset;
}

void SegmentWriter::seal() {
  if (fd_ < 0) return;
  put_u32(buffer_, kFooterSentinel);
  buffer_.insert(buffer_.end(), kFooterMagic, kFooterMagic + 4);
  put_u64(buffer_, count_);
  put_u64(buffer_, first_ts_);
  put_u64(buffer_, last_ts_);
  put_u32(buffer_, rolling_crc_);
  size_ += kFooterSize;
  flush();
  ::fsync(fd_);
  ::close(fd_);
  fd_ = -1;
}

LogWriter::LogWriter(fs::path dir, RotationPolicy policy, std::uint64_t scenario_hash)
    : dir_(std::move(dir)), policy_(policy), scenario_hash_(scenario_hash) {
  fs::create_directories(dir_);
  auto existing = list_segments(dir_);
  segment_count_ = static_cast<std::uint32_t>(existing.size());
  if (existing.empty()) return;
  last_created_ = parse_created(existing.back());
  have_last_created_ = true;

  // Recovery: the newest segment may be unsealed with a torn tail.
  auto bytes = read_file(existing.back());
  auto parsed = parse_segment(bytes);
  if (parsed.footer) return;
  std::uint64_t keep = parsed.torn_tail ? *parsed.torn_tail : bytes.size();
  if (!parsed.header_ok) return;  // leave damaged headers for an operator
  std::uint32_t rolling = 0;
  std::uint64_t first = 0, last = 0;
  for (const auto& e : parsed.records) {
    std::size_t total = 4 + 8 + e.frame_len + 4;
    rolling = wire::crc32(std::span<const std::uint8_t>(bytes.data() + e.offset, total), rolling);
    if (first == 0) first = e.receive_time_ns;
    last = e.receive_time_ns;
  }
  std::vector<std::uint8_t> footer;
  put_u32(footer, kFooterSentinel);
  footer.insert(footer.end(), kFooterMagic, kFooterMagic + 4);
  put_u64(footer, parsed.records.size());
  put_u64(footer, first);
  put_u64(footer, last);
  put_u32(footer, rolling);
  int fd = ::open(existing.back().c_str(), O_WRONLY);
  if (fd < 0 || ::ftruncate(fd, static_cast<off_t>(keep)) != 0 ||
      ::pwrite(fd, footer.data(), footer.size(), static_cast<off_t>(keep)) !=
          static_cast<ssize_t>(footer.size())) {
    if (fd >= 0) ::close(fd);
    throw Error(Errc::write_failure, "recovery of " + existing.back().string() + " failed");
  }
  ::fsync(fd);
  ::close(fd);
}

LogWriter::~LogWriter() {
  try {
    close();
  } catch (...) {
  }
}

void LogWriter::open_segment(std::uint64_t created_ns) {
  if (have_last_created_ && created_ns <= last_created_) created_ns = last_created_ + 1;
  current_ = std::make_unique<SegmentWriter>(dir_ / segment_file_name(created_ns), created_ns,
                                             scenario_hash_, policy_.max_bytes);
  last_created_ = created_ns;
  have_last_created_ = true;
  ++segment_count_;
}

RecordRef LogWriter::append(const StoredRecord& record) {
  if (current_ && current_->record_count() > 0 &&
      static_cast<Nanos>(record.receive_time_ns - current_->first_receive_ns()) >= policy_.max_span_ns) {
    rotate();
  }
  if (!current_) open_segment(record.receive_time_ns);
  try {
    return {segment_count_ - 1, current_->append(record)};
  } catch (const Error& e) {
    if (e.code() != Errc::segment_full) throw;
  }
  rotate();
  open_segment(record.receive_time_ns);
  return {segment_count_ - 1, current_->append(record)};
}

void LogWriter::rotate() {
  if (current_) {
    current_->seal();
    current_.reset();
  }
}

void LogWriter::flush() {
  if (current_) current_->flush();
}

void LogWriter::close() { rotate(); }

// ---------------------------------------------------------------------------
// Reading

ParsedSegment parse_segment(std::span<const std::uint8_t> b) {
  ParsedSegment out;
  out.header_ok = parse_header(b, out.header);
  if (!out.header_ok) return out;

  std::size_t pos = kSegmentHeaderSize;
  auto resync = [&](std::size_t from) -> std::optional<std::size_t> {
    SegmentFooter f;
    for (std::size_t p = from; p < b.size(); ++p) {
      if (valid_record_at(b, p) || footer_at(b, p, f)) return p;
    }
    return std::nullopt;
  };

  while (pos < b.size()) {
    SegmentFooter footer;
    if (footer_at(b, pos, footer)) {
      out.footer = footer;
      pos = b.size();
      break;
    }
    if (std::size_t len = valid_record_at(b, pos)) {
      out.records.push_back({pos, get_u64(b.data() + pos + 4), pos + 12, len - 16});
      pos += len;
      continue;
    }
    // Damaged record or torn tail: a later valid record means damage.
    auto next = resync(pos + 1);
    if (!next) {
      out.torn_tail = pos;
      break;
    }
    out.crc_failures.push_back(pos);
    pos = *next;
  }

  if (out.footer && out.crc_failures.empty()) {
    std::uint32_t rolling = 0;
    for (const auto& e : out.records) {
      rolling = wire::crc32(b.subspan(e.offset, e.frame_len + 16), rolling);
    }
    out.footer_matches = out.footer->count == out.records.size() && out.footer->rolling_crc == rolling;
  }
  return out;
}

LogReader::LogReader(fs::path dir) : dir_(std::move(dir)), segments_(list_segments(dir_)) {
  cache_.resize(segments_.size());
}

const std::vector<std::uint8_t>& LogReader::bytes_of(std::uint32_t segment) {
  auto& slot = cache_.at(segment);
  if (!slot) slot = read_file(segments_[segment]);
  return *slot;
}

void LogReader::iterate(std::uint64_t from, std::uint64_t to, const Visitor& visit) {
  corruption_.clear();
  for (std::uint32_t s = 0; s < segments_.size(); ++s) {
    const auto& bytes = bytes_of(s);
    auto parsed = parse_segment(bytes);
    const std::string file = segments_[s].filename().string();
    if (!parsed.header_ok) {
      corruption_.push_back({s, file, 0, "bad_header"});
      continue;
    }
    for (auto off : parsed.crc_failures) corruption_.push_back({s, file, off, "crc_failure"});
    if (parsed.footer && !parsed.footer_matches) {
      corruption_.push_back({s, file, bytes.size() - kFooterSize, "footer_mismatch"});
    }
    if (parsed.footer && parsed.footer->count > 0 &&
        (parsed.footer->last_ts < from || parsed.footer->first_ts >= to) && parsed.footer_matches) {
      continue;
    }
    for (const auto& e : parsed.records) {
      if (e.receive_time_ns < from || e.receive_time_ns >= to) continue;
      visit({s, e.offset}, e.receive_time_ns,
            std::span<const std::uint8_t>(bytes.data() + e.frame_begin, e.frame_len));
    }
  }
}

std::vector<StoredRecord> LogReader::read_range(std::uint64_t from, std::uint64_t to) {
  std::vector<StoredRecord> out;
  iterate(from, to, [&](RecordRef, std::uint64_t ts, std::span<const std::uint8_t> frame) {
    out.push_back({ts, std::vector<std::uint8_t>(frame.begin(), frame.end())});
  });
  return out;
}

std::vector<StoredRecord> LogReader::read_all() { return read_range(0, UINT64_MAX); }

StoredRecord LogReader::read(RecordRef ref) {
  if (ref.segment >= segments_.size()) throw Error(Errc::out_of_range, "no such segment");
  const auto& b = bytes_of(ref.segment);
  std::size_t len = ref.offset < b.size() ? valid_record_at(b, ref.offset) : 0;
  if (!len) throw Error(Errc::corrupt_segment, "no valid record at offset " + std::to_string(ref.offset));
  const auto* p = b.data() + ref.offset;
  return {get_u64(p + 4), std::vector<std::uint8_t>(p + 12, p + len - 4)};
}

ScanReport integrity_scan(const fs::path& dir, ScanOptions options) {
  ScanReport report;
  auto segs = list_segments(dir);
  report.segments = segs.size();
  for (std::uint32_t s = 0; s < segs.size(); ++s) {
    auto bytes = read_file(segs[s]);
    auto parsed = parse_segment(bytes);
    const std::string file = segs[s].filename().string();
    if (!parsed.header_ok) {
      report.other.push_back({s, file, 0, "bad_header"});
      continue;
    }
    report.records += parsed.records.size();
    if (parsed.footer) ++report.sealed_segments;
    for (auto off : parsed.crc_failures) report.crc_failures.push_back({s, file, off, "crc_failure"});
    if (parsed.footer && !parsed.footer_matches) {
      report.other.push_back({s, file, bytes.size() - kFooterSize, "footer_mismatch"});
    }
    if (parsed.torn_tail) {
      report.torn_tails.push_back({s, file, *parsed.torn_tail, "torn_tail"});
      if (options.truncate_torn_tails) fs::resize_file(segs[s], *parsed.torn_tail);
    }
  }
  return report;
}

}  // namespace shf::storage
