#pragma once

// World-state snapshots assembled from a fused run, their sht/1 text form,
// and field-level diffs between snapshots.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shf/common.hpp"

namespace shf::twin {

inline constexpr std::string_view kSnapshotSchema = "sht/1";

struct Room {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0, height = 0;
  bool operator==(const Room&) const = default;
};

struct ResidentState {
  std::string id;
  std::optional<bool> present;
  std::optional<double> x, y;
  std::optional<std::string> posture;
  std::optional<std::string> activity;
  std::optional<std::string> emotion;
  std::optional<double> confidence;  // of the activity label
  bool operator==(const ResidentState&) const = default;
};

struct DeviceEntry {
  std::string name;
  std::optional<std::string> state;
  bool operator==(const DeviceEntry&) const = default;
};

struct Environment {
  std::optional<double> temperature_c;
  std::optional<double> humidity_rh;
  bool operator==(const Environment&) const = default;
};

struct SensorHealth {
  std::optional<std::string> session;  // active, suspect or dead
  std::optional<Nanos> last_seen;
  bool operator==(const SensorHealth&) const = default;
};

struct Provenance {
  std::string run_id;
  std::string config_hash;
  bool operator==(const Provenance&) const = default;
};

struct Snapshot {
  Nanos ts = 0;
  Room room;
  std::vector<ResidentState> residents;
  std::map<DeviceId, DeviceEntry> devices;
  Environment environment;
  std::map<DeviceId, SensorHealth> sensor_health;
  Provenance provenance;
  bool operator==(const Snapshot&) const = default;
};

nlohmann::json to_json(const Snapshot& s);
Snapshot snapshot_from_json(const nlohmann::json& j);

/// One sht/1 line, without the trailing newline.
std::string serialize(const Snapshot& s);
/// Throws parse_error on malformed text or a different schema.
Snapshot parse(std::string_view line);

/// Changed paths as a JSON Patch; replace and remove operations also carry
/// the previous value under "old". The timestamp travels in the pair.
struct SnapshotDiff {
  Nanos from_ts = 0;
  Nanos to_ts = 0;
  nlohmann::json changes = nlohmann::json::array();
  bool empty() const { return changes.empty(); }
};

/// Throws order_violation when b is older than a.
SnapshotDiff diff(const Snapshot& a, const Snapshot& b);
/// Throws validation_error when the diff does not start at `a`.
Snapshot apply(const Snapshot& a, const SnapshotDiff& d);

nlohmann::json to_json(const SnapshotDiff& d);
SnapshotDiff diff_from_json(const nlohmann::json& j);

// ---- assembly from a fused directory ----

template <typename T>
struct Series {
  std::vector<Nanos> t;
  std::vector<T> v;

  void push(Nanos at, T value) {
    t.push_back(at);
    v.push_back(std::move(value));
  }
  /// Latest value at or before `ts`.
  const T* at(Nanos ts) const;
  void sort();
};

struct TrackPoint {
  double x = 0, y = 0;
};

struct LabelPoint {
  std::string activity;
  double confidence = 0;
  std::string emotion;
};

struct TwinInputs {
  Nanos begin = 0;  // reference start of the run
  Nanos end = 0;
  Room room;
  std::vector<std::string> residents;
  std::map<DeviceId, std::string> device_names;
  std::vector<DeviceId> sensors;
  Provenance provenance;

  Series<std::uint8_t> presence;  // Level 1 keep decisions, 0 or 1
  Series<TrackPoint> track;
  Series<std::string> posture;
  Series<LabelPoint> labels;  // at window end
  Series<double> temperature;
  Series<double> humidity;
  std::map<DeviceId, Series<std::string>> device_states;
  std::map<DeviceId, std::vector<Nanos>> receipts;
  std::map<DeviceId, Series<std::string>> sessions;
};

/// Reads the fused directory; labels and transitions are optional.
TwinInputs load_inputs(const std::filesystem::path& fused_dir);

/// Most recent value per field at or before `ts`, null where nothing is known.
/// Throws out_of_range outside the run.
Snapshot build_snapshot(const TwinInputs& in, Nanos ts);

/// Snapshot times at `cadence_hz` across the run, ending at or before its end.
std::vector<Nanos> stream_times(const TwinInputs& in, double cadence_hz);

/// Writes one sht/1 line per stream time; returns the count.
std::size_t write_stream(const TwinInputs& in, double cadence_hz, const std::filesystem::path& out);

}  // namespace shf::twin
