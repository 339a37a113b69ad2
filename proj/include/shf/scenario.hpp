#pragma once

// Scenario description (`shs/1`): the scripted home, its residents, devices,
// environment and sensor fleet.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shf/common.hpp"
#include "shf/geometry.hpp"
#include "shf/timebase.hpp"

namespace shf::sensors {

inline constexpr std::string_view kScenarioSchema = "shs/1";

struct Region {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
};

struct RoomBounds {
  double x_min = 0.0, y_min = 0.0, x_max = 10.0, y_max = 6.0;
  double height = 2.8;
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
};

struct Waypoint {
  double t = 0, x = 0, y = 0;
};

struct Interval {
  double start = 0, end = 0;
  bool contains(double t) const { return t >= start && t < end; }
};

struct LabelInterval {
  double start = 0, end = 0;
  std::string label;
};

struct GaitProfile {
  double speed_mps = 1.0;
  double cadence_spm = 100.0;
  /// Coefficient of variation of inter-step intervals under neutral mood.
  double cadence_cv = 0.03;
};

struct ResidentScript {
  std::string id;
  std::vector<Waypoint> waypoints;
  std::vector<LabelInterval> activity_timeline;
  std::vector<LabelInterval> emotion_timeline;
  std::vector<Interval> speech_intervals;
  /// Resident is out of the home; no sensor observes them.
  std::vector<Interval> away_intervals;
  GaitProfile gait;
  double body_mass_kg = 71.4;  // ~700 N
};

struct Device {
  DeviceId id = 0;
  std::string name;
  std::string initial_state = "off";
};

struct DeviceEvent {
  double t = 0;
  DeviceId device_id = 0;
  std::string state;
};

struct ProfilePoint {
  double t = 0, value = 0;
};

struct EnvironmentProfile {
  std::vector<ProfilePoint> temperature_c;
  std::vector<ProfilePoint> humidity_rh;
};

struct NoiseParams {
  double keypoint_sigma = 0.001;   // normalized image units
  double keypoint_confidence = 0.9;
  double audio_sigma = 0.03;
  double audio_floor = 0.03;
  double floor_sigma_n = 0.5;
  double floor_deadband_n = 2.0;
  double temperature_sigma_c = 0.05;
  double humidity_sigma_rh = 0.2;
};

/// Floor grid geometry; cell (c, r) is centered at
/// (origin_x + (c + 0.5) * pitch, origin_y + (r + 0.5) * pitch).
struct FloorGrid {
  std::uint16_t cols = 40;
  std::uint16_t rows = 24;
  double pitch_m = 0.25;
  double origin_x = 0.0;
  double origin_y = 0.0;

  double cell_center_x(int c) const { return origin_x + (c + 0.5) * pitch_m; }
  double cell_center_y(int r) const { return origin_y + (r + 0.5) * pitch_m; }
};

/// Per-link network behavior between a device and the collector.
struct LinkParams {
  Nanos latency_ns = 1'000'000;
  Nanos latency_jitter_ns = 200'000;
  double loss_prob = 0.0;
  double corrupt_prob = 0.0;
};

struct SensorSpec {
  DeviceId device_id = 0;
  Modality modality = Modality::environment;
  double rate_hz = 1.0;
  double phase_s = 0.0;
  timebase::ClockModel clock;
  NoiseParams noise;
  LinkParams link;
  std::optional<CameraPose> pose;
  std::optional<Intrinsics> intrinsics;
  std::optional<FloorGrid> grid;
  std::optional<Region> privacy_zone;
  /// device_usage only: devices reported round-robin.
  std::vector<DeviceId> watch_devices;

  void validate() const;
};

struct Fault {
  DeviceId device_id = 0;
  double kill_s = 0;
  double restart_s = 0;
};

struct SyncSchedule {
  double interval_s = 10.0;
  timebase::ExchangeParams exchange;
};

struct Scenario {
  std::string name;
  double duration_s = 0;
  std::uint64_t seed = 0;
  RoomBounds room;
  /// Seconds after local midnight at reference time zero.
  double start_time_of_day_s = 12 * 3600.0;
  std::vector<ResidentScript> residents;
  std::vector<Device> devices;
  std::vector<DeviceEvent> device_events;
  EnvironmentProfile environment;
  std::vector<SensorSpec> sensors;
  std::vector<Fault> faults;
  double heartbeat_interval_s = 1.0;
  SyncSchedule sync;
  /// FNV-1a of the source text (0 when built in code).
  std::uint64_t source_hash = 0;

  Nanos duration_ns() const { return seconds_to_ns(duration_s); }
  const Device* find_device(DeviceId id) const;
  const Device* find_device(std::string_view name) const;
  const SensorSpec* find_sensor(DeviceId id) const;

  /// Throws Errc::validation_error naming the violated constraint.
  void validate() const;
};

Scenario parse_scenario(const nlohmann::json& doc);
Scenario parse_scenario_text(std::string_view text);
Scenario load_scenario(const std::filesystem::path& path);

/// Sensor descriptor carried in HELLO payloads so a log is self-describing
/// (clock parameters are deliberately absent).
nlohmann::json sensor_descriptor(const SensorSpec& spec, const Scenario& scenario);
SensorSpec sensor_from_descriptor(const nlohmann::json& d);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace shf::sensors
