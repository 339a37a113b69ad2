#pragma once

// Device clock model and the reference-timeline mapping fitted from
// four-timestamp sync exchanges.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "shf/common.hpp"

namespace shf::timebase {

/// Affine clock with additive Gaussian read jitter.
struct ClockModel {
  Nanos offset_ns = 0;
  double drift_ppm = 0.0;
  double jitter_sigma_ns = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Read indices at or above this base are reserved for sync exchanges so they
/// never share jitter draws with sample timestamps.
constexpr std::uint64_t kSyncReadIndexBase = 1ULL << 48;

/// Device timestamp for a read at `true_time` on the reference timeline.
Nanos device_time(const ClockModel& model, Nanos true_time, std::uint64_t read_index);

/// One four-timestamp exchange. t0/t3 are on the reference clock, t1/t2 on the
/// device clock.
struct SyncRound {
  Nanos t0 = 0;
  Nanos t1 = 0;
  Nanos t2 = 0;
  Nanos t3 = 0;

  bool operator==(const SyncRound&) const = default;
};

struct OffsetDelay {
  double offset_ns = 0.0;
  Nanos delay_ns = 0;
};

/// offset = ((t1-t0)+(t2-t3))/2, delay = (t3-t0)-(t2-t1).
/// Throws Errc::negative_delay when the round is malformed.
OffsetDelay estimate_offset_delay(const SyncRound& round);

/// A round tagged with the reference time of the epoch it belongs to.
struct EpochRound {
  SyncRound round;
  Nanos epoch_ref = 0;
};

struct ClockMapping {
  double offset_ns = 0.0;
  double drift_ppm = 0.0;
  Nanos fitted_at = 0;
  std::uint64_t validity_window_ns = 0;

  static ClockMapping identity() { return {}; }
};

/// Min-delay round per epoch, then a least-squares line of offset over the
/// round's reference midpoint. Requires at least two epochs.
ClockMapping fit_mapping(std::span<const EpochRound> rounds);

/// Real-valued inverse of the affine model; strictly monotone in device_ts.
double to_reference_exact(const ClockMapping& mapping, Nanos device_ts);

/// Inverse rounded to the nearest nanosecond; non-decreasing in device_ts.
Nanos to_reference(const ClockMapping& mapping, Nanos device_ts);

/// Parameters for synthesizing a sync exchange against a ClockModel.
struct ExchangeParams {
  Nanos delay_out_ns = 5 * kNanosPerMilli;
  Nanos delay_back_ns = 5 * kNanosPerMilli;
  Nanos turnaround_ns = 100'000;
  Nanos round_spacing_ns = 20 * kNanosPerMilli;
  int rounds_per_epoch = 8;
};

/// Rounds of one epoch starting at reference time `epoch_ref`. Read indices
/// are drawn from kSyncReadIndexBase + first_read_index upward (two per round).
std::vector<EpochRound> synthesize_epoch(const ClockModel& model, Nanos epoch_ref,
                                         const ExchangeParams& params,
                                         std::uint64_t first_read_index);

}  // namespace shf::timebase
