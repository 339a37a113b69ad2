#pragma once

// Level 0: map every stream onto the reference timeline and pair secondary
// samples with the primary stream's ticks.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shf/common.hpp"
#include "shf/storage.hpp"
#include "shf/timebase.hpp"

namespace shf::align {

enum class Policy { causal_last, nearest };
std::string_view policy_name(Policy p);
Policy parse_policy(std::string_view name);

struct AlignConfig {
  Modality primary = Modality::camera;
  /// Staleness window per modality, indexed by modality id.
  std::array<Nanos, static_cast<std::size_t>(kModalityCount)> window_ns{50 * kNanosPerMilli, 50 * kNanosPerMilli, 150 * kNanosPerMilli,
                                              5 * kNanosPerSecond, 5 * kNanosPerSecond};
  Policy policy = Policy::causal_last;
  /// Keep emitting ticks at the primary's nominal rate across primary gaps,
  /// with the primary slot missing.
  bool emit_when_primary_missing = false;

  Nanos window(Modality m) const { return window_ns[static_cast<std::size_t>(m)]; }
  void validate() const;
};

struct StreamSample {
  Nanos device_ts = 0;
  storage::RecordRef ref;
};

/// One device's samples in device-timestamp order.
struct Stream {
  DeviceId device_id = 0;
  Modality modality = Modality::camera;
  double rate_hz = 0;
  std::optional<timebase::ClockMapping> mapping;
  std::vector<StreamSample> samples;
};

struct Slot {
  std::size_t sample = 0;  // index into the stream's samples
  storage::RecordRef ref;
  Nanos sample_ts = 0;      // mapped timestamp of the chosen sample
  Nanos staleness_ns = 0;   // ref_ts - sample_ts
};

/// Slots are indexed like the input streams.
struct AlignedRecord {
  Nanos ref_ts = 0;
  std::vector<std::optional<Slot>> slots;
};

struct AlignResult {
  std::vector<AlignedRecord> records;
  std::size_t primary_stream = 0;
  std::uint64_t duplicate_primary = 0;  // primary samples collapsed onto a later one
  std::uint64_t synthetic_ticks = 0;    // ticks emitted with the primary missing
  std::uint64_t input_samples = 0;
};

/// The configured primary if present, else the fastest available modality,
/// ties to the smaller modality id. Throws no_streams.
Modality select_primary(const AlignConfig& config, const std::map<Modality, double>& available_rates);

/// Index of the stream that defines ticks: the lowest device id of the
/// selected primary modality.
std::size_t primary_stream(const std::vector<Stream>& streams, const AlignConfig& config);

/// Mapped timestamps of a stream's samples. Throws missing_mapping or
/// unsorted_stream.
std::vector<Nanos> mapped_times(const Stream& s);

/// Single pass over all streams. Throws no_streams, missing_mapping,
/// unsorted_stream.
AlignResult align(const std::vector<Stream>& streams, const AlignConfig& config);

/// Upper edges (inclusive, ns) of the |staleness| histogram bins; one extra
/// overflow bin follows the last edge.
const std::vector<Nanos>& staleness_bin_edges();

struct StreamCoverage {
  DeviceId device_id = 0;
  Modality modality = Modality::camera;
  std::uint64_t filled = 0;
  std::uint64_t records = 0;
  std::uint64_t input_samples = 0;
  double fill_rate = 0;
  std::vector<std::uint64_t> staleness_histogram;
};

struct CoverageReport {
  std::uint64_t records = 0;
  std::uint64_t input_samples = 0;
  double size_ratio = 0;  // output records / input samples
  std::vector<StreamCoverage> streams;
  bool empty() const { return records == 0; }
};

CoverageReport coverage_report(const AlignResult& result, const std::vector<Stream>& streams);
nlohmann::json to_json(const CoverageReport& r);

}  // namespace shf::align
