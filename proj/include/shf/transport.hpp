#pragma once

// Acquisition bookkeeping: per-device sessions, sequence-gap detection,
// liveness monitoring and the counters that make losses auditable.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shf/common.hpp"
#include "shf/storage.hpp"
#include "shf/wire.hpp"

namespace shf::transport {

enum class SessionState { active, suspect, dead };
std::string_view session_state_name(SessionState s);

struct Session {
  DeviceId device_id = 0;
  std::uint8_t modality = 0;
  std::optional<std::uint32_t> last_sequence;
  Nanos last_heartbeat = 0;  // receive time of the most recent frame of any type
  SessionState state = SessionState::active;
  std::uint64_t frames = 0;
  std::uint32_t incarnation = 0;  // bumped by every HELLO after the first
  bool closed = false;            // BYE received; exempt from liveness checks
};

enum class GapKind { sequence_gap, heartbeat_timeout, crc_failure, reconnect, backpressure_drop, unknown_modality };
std::string_view gap_kind_name(GapKind k);

struct GapReport {
  DeviceId device_id = 0;
  GapKind kind = GapKind::sequence_gap;
  /// Sequence range for sequence_gap / backpressure_drop (inclusive).
  std::uint32_t first_seq = 0;
  std::uint32_t last_seq = 0;
  /// Time span for heartbeat_timeout (last frame .. detection) and reconnect.
  Nanos span_begin = 0;
  Nanos span_end = 0;
  Nanos detected_at = 0;

  std::uint64_t missing_frames() const {
    return (kind == GapKind::sequence_gap || kind == GapKind::backpressure_drop)
               ? std::uint64_t{last_seq} - first_seq + 1
               : 0;
  }
};

nlohmann::json to_json(const GapReport& g);
GapReport gap_from_json(const nlohmann::json& j);

struct StateTransition {
  DeviceId device_id = 0;
  SessionState from = SessionState::active;
  SessionState to = SessionState::active;
  Nanos at = 0;
};

struct MonitorConfig {
  Nanos heartbeat_interval_ns = kNanosPerSecond;
  int suspect_after = 2;
  int dead_after = 3;
};

struct MonitorResult {
  std::vector<GapReport> reports;
  std::vector<StateTransition> transitions;
};

struct IngestResult {
  storage::StoredRecord record;
  std::vector<GapReport> reports;
  std::optional<StateTransition> revived;
};

/// Device sessions. Updates for one device are serialized by the table's
/// mutex, so reader threads may call ingest concurrently.
class SessionTable {
 public:
  /// Stamps, checks sequence continuity, and updates the session.
  /// `frame_bytes` are the verbatim bytes `frame` was decoded from.
  IngestResult ingest(const wire::Frame& frame, std::vector<std::uint8_t> frame_bytes, Nanos receive_time);

  /// Silence of >= suspect_after intervals marks a session suspect, >=
  /// dead_after marks it dead and emits heartbeat_timeout.
  MonitorResult monitor(Nanos now, const MonitorConfig& config);

  /// Earliest time at which monitor() would change some session's state.
  std::optional<Nanos> next_deadline(const MonitorConfig& config) const;

  std::map<DeviceId, Session> snapshot() const;
  std::optional<Session> find(DeviceId id) const;

 private:
  mutable std::mutex mu_;
  std::map<DeviceId, Session> sessions_;
};

/// frames_emitted is filled in by whoever knows it (the simulator); the
/// collector counts everything it sees.
struct Counters {
  std::uint64_t frames_emitted = 0;
  std::uint64_t frames_received = 0;  // decoded successfully
  std::uint64_t frames_rejected = 0;  // failed decode (CRC, magic, ...)
  std::uint64_t frames_stored = 0;
  std::uint64_t frames_dropped_backpressure = 0;
  std::uint64_t frames_lost_in_link = 0;  // only known to a simulator
  std::uint64_t bytes_received = 0;
  std::uint64_t gap_frames_reported = 0;  // sum of sequence_gap sizes

  /// emitted = stored + rejected + dropped (+ link losses when injected).
  bool reconciles() const {
    return frames_emitted == frames_stored + frames_rejected + frames_dropped_backpressure + frames_lost_in_link;
  }
};

nlohmann::json to_json(const Counters& c);
Counters counters_from_json(const nlohmann::json& j);

/// Device id from a frame's header bytes when they are at least partly
/// readable (used for reporting undecodable frames).
std::optional<DeviceId> peek_device_id(std::span<const std::uint8_t> bytes);

}  // namespace shf::transport
