#pragma once

// The simulated device fleet on the wire: each sensor's full frame sequence
// (HELLO, SAMPLE, HEARTBEAT, TIMERESP, BYE) with link latency, loss and
// corruption applied, plus the ground-truth export.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "shf/sensors.hpp"
#include "shf/wire.hpp"

namespace shf::fleet {

struct EmittedFrame {
  DeviceId device_id = 0;
  std::uint32_t sequence = 0;
  wire::MsgType msg_type = wire::MsgType::sample;
  Nanos send_time = 0;     // reference time the device hands the frame to its link
  Nanos arrival_time = 0;  // reference time it reaches the collector
  bool lost = false;
  bool corrupted = false;
  std::vector<std::uint8_t> bytes;  // as delivered; a corrupted frame has one bit flipped
};

struct FleetOptions {
  /// Added to every reference time before it is fed to a device clock or
  /// written into a TIMERESP. Live runs use the wall clock at start.
  Nanos reference_base = 0;
  /// Apply each sensor's loss/corruption probabilities.
  bool link_faults = true;
};

/// Every frame one sensor emits over the scenario, in send order.
std::vector<EmittedFrame> device_frames(const sensors::Simulator& sim, const sensors::SensorSpec& sensor,
                                        const FleetOptions& options = {});

/// All sensors, merged by (arrival_time, device_id, sequence).
std::vector<EmittedFrame> fleet_frames(const sensors::Simulator& sim, const FleetOptions& options = {});

/// Ground truth every `period_ns`, one JSON object per line.
void write_truth(const sensors::Scenario& scenario, const std::filesystem::path& path,
                 Nanos period_ns = 100 * kNanosPerMilli);

/// Read indices for non-sample frames, kept clear of sample indices.
constexpr std::uint64_t kControlReadIndexBase = 1ULL << 47;

}  // namespace shf::fleet
