#include "shf/transport.hpp"

#include <nlohmann/json.hpp>

namespace shf::transport {

using nlohmann::json;

std::string_view session_state_name(SessionState s) {
  switch (s) {
    case SessionState::active: return "active";
    case SessionState::suspect: return "suspect";
    case SessionState::dead: return "dead";
  }
  return "unknown";
}

std::string_view gap_kind_name(GapKind k) {
  switch (k) {
    case GapKind::sequence_gap: return "sequence_gap";
    case GapKind::heartbeat_timeout: return "heartbeat_timeout";
    case GapKind::crc_failure: return "crc_failure";
    case GapKind::reconnect: return "reconnect";
    case GapKind::backpressure_drop: return "backpressure_drop";
    case GapKind::unknown_modality: return "unknown_modality";
  }
  return "unknown";
}

namespace {
GapKind parse_gap_kind(const std::string& s) {
  for (auto k : {GapKind::sequence_gap, GapKind::heartbeat_timeout, GapKind::crc_failure,
                 GapKind::reconnect, GapKind::backpressure_drop, GapKind::unknown_modality}) {
    if (gap_kind_name(k) == s) return k;
  }
  throw Error(Errc::parse_error, "unknown gap kind '" + s + "'");
}
}  // namespace

json to_json(const GapReport& g) {
  json j{{"device_id", g.device_id}, {"kind", gap_kind_name(g.kind)}, {"detected_at", g.detected_at}};
  if (g.kind == GapKind::sequence_gap || g.kind == GapKind::backpressure_drop) {
    j["first_seq"] = g.first_seq;
    j["last_seq"] = g.last_seq;
  } else {
    j["span_begin"] = g.span_begin;
    j["span_end"] = g.span_end;
  }
  return j;
}

GapReport gap_from_json(const json& j) {
  GapReport g;
  g.device_id = j.at("device_id").get<DeviceId>();
  g.kind = parse_gap_kind(j.at("kind").get<std::string>());
  g.detected_at = j.at("detected_at").get<Nanos>();
  g.first_seq = j.value<std::uint32_t>("first_seq", 0);
  g.last_seq = j.value<std::uint32_t>("last_seq", 0);
  g.span_begin = j.value<Nanos>("span_begin", 0);
  g.span_end = j.value<Nanos>("span_end", 0);
  return g;
}

json to_json(const Counters& c) {
  return {{"frames_emitted", c.frames_emitted},
          {"frames_received", c.frames_received},
          {"frames_rejected", c.frames_rejected},
          {"frames_stored", c.frames_stored},
          {"frames_dropped_backpressure", c.frames_dropped_backpressure},
          {"frames_lost_in_link", c.frames_lost_in_link},
          {"bytes_received", c.bytes_received},
          {"gap_frames_reported", c.gap_frames_reported}};
}

Counters counters_from_json(const json& j) {
  Counters c;
  c.frames_emitted = j.value<std::uint64_t>("frames_emitted", 0);
  c.frames_received = j.value<std::uint64_t>("frames_received", 0);
  c.frames_rejected = j.value<std::uint64_t>("frames_rejected", 0);
  c.frames_stored = j.value<std::uint64_t>("frames_stored", 0);
  c.frames_dropped_backpressure = j.value<std::uint64_t>("frames_dropped_backpressure", 0);
  c.frames_lost_in_link = j.value<std::uint64_t>("frames_lost_in_link", 0);
  c.bytes_received = j.value<std::uint64_t>("bytes_received", 0);
  c.gap_frames_reported = j.value<std::uint64_t>("gap_frames_reported", 0);
  return c;
}

std::optional<DeviceId> peek_device_id(std::span<const std::uint8_t> b) {
  if (b.size() < 8) return std::nullopt;
  for (std::size_t i = 0; i < wire::kMagic.size(); ++i) {
    if (b[i] != wire::kMagic[i]) return std::nullopt;
  }
  return wire::get_u16(b.data() + 6);
}

IngestResult SessionTable::ingest(const wire::Frame& frame, std::vector<std::uint8_t> frame_bytes,
                                  Nanos receive_time) {
  IngestResult out;
  out.record.receive_time_ns = static_cast<std::uint64_t>(receive_time);
  out.record.frame_bytes = std::move(frame_bytes);

  std::lock_guard lock(mu_);
  auto [it, created] = sessions_.try_emplace(frame.device_id);
  Session& s = it->second;
  if (created) {
    s.device_id = frame.device_id;
    s.modality = frame.modality;
  }

  const bool hello = frame.msg_type == wire::MsgType::hello;
  if (hello) {
    if (!created) {
      GapReport g;
      g.device_id = frame.device_id;
      g.kind = GapKind::reconnect;
      g.span_begin = s.last_heartbeat;
      g.span_end = receive_time;
      g.detected_at = receive_time;
      out.reports.push_back(g);
      ++s.incarnation;
    }
    s.modality = frame.modality;
    s.closed = false;
  } else if (s.last_sequence) {
    const std::uint64_t expected = std::uint64_t{*s.last_sequence} + 1;
    if (frame.sequence > expected) {
      GapReport g;
      g.device_id = frame.device_id;
      g.kind = GapKind::sequence_gap;
      g.first_seq = static_cast<std::uint32_t>(expected);
      g.last_seq = frame.sequence - 1;
      g.detected_at = receive_time;
      out.reports.push_back(g);
    } else if (frame.sequence < expected) {
      // Sequence went backwards without a HELLO: the device restarted
      // without announcing itself. Treated as a reconnect.
      GapReport g;
      g.device_id = frame.device_id;
      g.kind = GapKind::reconnect;
      g.span_begin = s.last_heartbeat;
      g.span_end = receive_time;
      g.detected_at = receive_time;
      out.reports.push_back(g);
      ++s.incarnation;
    }
  }
  if (!is_known_modality(frame.modality)) {
    GapReport g;
    g.device_id = frame.device_id;
    g.kind = GapKind::unknown_modality;
    g.span_begin = g.span_end = g.detected_at = receive_time;
    out.reports.push_back(g);
  }

  s.last_sequence = frame.sequence;
  s.last_heartbeat = receive_time;
  ++s.frames;
  if (frame.msg_type == wire::MsgType::bye) s.closed = true;
  if (s.state != SessionState::active) {
    out.revived = StateTransition{s.device_id, s.state, SessionState::active, receive_time};
    s.state = SessionState::active;
  }
  return out;
}

MonitorResult SessionTable::monitor(Nanos now, const MonitorConfig& cfg) {
  MonitorResult out;
  std::lock_guard lock(mu_);
  for (auto& [id, s] : sessions_) {
    if (s.closed || s.state == SessionState::dead) continue;
    const Nanos silence = now - s.last_heartbeat;
    if (silence >= cfg.dead_after * cfg.heartbeat_interval_ns) {
      out.transitions.push_back({id, s.state, SessionState::dead, now});
      GapReport g;
      g.device_id = id;
      g.kind = GapKind::heartbeat_timeout;
      g.span_begin = s.last_heartbeat;
      g.span_end = now;
      g.detected_at = now;
      out.reports.push_back(g);
      s.state = SessionState::dead;
    } else if (s.state == SessionState::active && silence >= cfg.suspect_after * cfg.heartbeat_interval_ns) {
      out.transitions.push_back({id, s.state, SessionState::suspect, now});
      s.state = SessionState::suspect;
    }
  }
  return out;
}

std::optional<Nanos> SessionTable::next_deadline(const MonitorConfig& cfg) const {
  std::lock_guard lock(mu_);
  std::optional<Nanos> best;
  for (const auto& [id, s] : sessions_) {
    if (s.closed || s.state == SessionState::dead) continue;
    int k = s.state == SessionState::active ? cfg.suspect_after : cfg.dead_after;
    Nanos d = s.last_heartbeat + k * cfg.heartbeat_interval_ns;
    if (!best || d < *best) best = d;
  }
  return best;
}

std::map<DeviceId, Session> SessionTable::snapshot() const {
  std::lock_guard lock(mu_);
  return sessions_;
}

std::optional<Session> SessionTable::find(DeviceId id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

}  // namespace shf::transport
