#include "shf/twin.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shf/pipeline.hpp"

namespace shf::twin {

using nlohmann::json;

namespace {

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_get(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<T>();
}

void check_keys(const json& j, std::initializer_list<std::string_view> keys, const char* where) {
  if (!j.is_object()) throw Error(Errc::parse_error, std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw Error(Errc::parse_error, std::string(where) + ": unexpected field '" + k + "'");
    }
  }
}

DeviceId parse_id(const std::string& key) {
  std::size_t used = 0;
  unsigned long v = std::stoul(key, &used);
  if (used != key.size() || v > 0xFFFF) throw Error(Errc::parse_error, "bad device id '" + key + "'");
  return static_cast<DeviceId>(v);
}

}  // namespace

json to_json(const Snapshot& s) {
  json residents = json::array();
  for (const auto& r : s.residents) {
    residents.push_back({{"id", r.id},
                         {"present", opt(r.present)},
                         {"x", opt(r.x)},
                         {"y", opt(r.y)},
                         {"posture", opt(r.posture)},
                         {"activity", opt(r.activity)},
                         {"emotion", opt(r.emotion)},
                         {"confidence", opt(r.confidence)}});
  }
  json devices = json::object();
  for (const auto& [id, d] : s.devices) devices[std::to_string(id)] = {{"name", d.name}, {"state", opt(d.state)}};
  json health = json::object();
  for (const auto& [id, h] : s.sensor_health) {
    health[std::to_string(id)] = {{"session", opt(h.session)}, {"last_seen", opt(h.last_seen)}};
  }
  return {{"schema", kSnapshotSchema},
          {"ts", s.ts},
          {"room",
           {{"x_min", s.room.x_min},
            {"y_min", s.room.y_min},
            {"x_max", s.room.x_max},
            {"y_max", s.room.y_max},
            {"height", s.room.height}}},
          {"residents", residents},
          {"devices", devices},
          {"environment",
           {{"temperature_c", opt(s.environment.temperature_c)}, {"humidity_rh", opt(s.environment.humidity_rh)}}},
          {"sensor_health", health},
          {"provenance", {{"run_id", s.provenance.run_id}, {"config_hash", s.provenance.config_hash}}}};
}

Snapshot snapshot_from_json(const json& j) {
  try {
    check_keys(j, {"schema", "ts", "room", "residents", "devices", "environment", "sensor_health", "provenance"},
               "snapshot");
    if (j.at("schema") != kSnapshotSchema) {
      throw Error(Errc::parse_error, "snapshot schema must be " + std::string(kSnapshotSchema));
    }
    Snapshot s;
    s.ts = j.at("ts").get<Nanos>();
    const auto& room = j.at("room");
    check_keys(room, {"x_min", "y_min", "x_max", "y_max", "height"}, "room");
    s.room = {room.at("x_min").get<double>(), room.at("y_min").get<double>(), room.at("x_max").get<double>(),
              room.at("y_max").get<double>(), room.at("height").get<double>()};
    for (const auto& r : j.at("residents")) {
      check_keys(r, {"id", "present", "x", "y", "posture", "activity", "emotion", "confidence"}, "resident");
      ResidentState st;
      st.id = r.at("id").get<std::string>();
      st.present = opt_get<bool>(r, "present");
      st.x = opt_get<double>(r, "x");
      st.y = opt_get<double>(r, "y");
      st.posture = opt_get<std::string>(r, "posture");
      st.activity = opt_get<std::string>(r, "activity");
      st.emotion = opt_get<std::string>(r, "emotion");
      st.confidence = opt_get<double>(r, "confidence");
      s.residents.push_back(std::move(st));
    }
    for (const auto& [k, d] : j.at("devices").items()) {
      check_keys(d, {"name", "state"}, "device");
      s.devices[parse_id(k)] = {d.at("name").get<std::string>(), opt_get<std::string>(d, "state")};
    }
    const auto& env = j.at("environment");
    check_keys(env, {"temperature_c", "humidity_rh"}, "environment");
    s.environment = {opt_get<double>(env, "temperature_c"), opt_get<double>(env, "humidity_rh")};
    for (const auto& [k, h] : j.at("sensor_health").items()) {
      check_keys(h, {"session", "last_seen"}, "sensor_health");
      s.sensor_health[parse_id(k)] = {opt_get<std::string>(h, "session"), opt_get<Nanos>(h, "last_seen")};
    }
    const auto& p = j.at("provenance");
    check_keys(p, {"run_id", "config_hash"}, "provenance");
    s.provenance = {p.at("run_id").get<std::string>(), p.at("config_hash").get<std::string>()};
    return s;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("snapshot: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(Errc::parse_error, std::string("snapshot: ") + e.what());
  }
}

std::string serialize(const Snapshot& s) { return to_json(s).dump(); }

Snapshot parse(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("snapshot: ") + e.what());
  }
  return snapshot_from_json(j);
}

namespace {

json body(const Snapshot& s) {
  auto j = to_json(s);
  j.erase("ts");
  return j;
}

}  // namespace

SnapshotDiff diff(const Snapshot& a, const Snapshot& b) {
  if (b.ts < a.ts) throw Error(Errc::order_violation, "diff: snapshots out of order");
  SnapshotDiff d{a.ts, b.ts, json::array()};
  const auto from = body(a);
  for (auto op : json::diff(from, body(b))) {
    const auto& kind = op.at("op");
    if (kind == "replace" || kind == "remove") op["old"] = from.at(json::json_pointer(op.at("path").get<std::string>()));
    d.changes.push_back(std::move(op));
  }
  return d;
}

Snapshot apply(const Snapshot& a, const SnapshotDiff& d) {
  if (d.from_ts != a.ts) throw Error(Errc::validation_error, "diff does not start at this snapshot");
  json patched;
  try {
    patched = body(a).patch(d.changes);
  } catch (const json::exception& e) {
    throw Error(Errc::validation_error, std::string("diff: ") + e.what());
  }
  patched["ts"] = d.to_ts;
  return snapshot_from_json(patched);
}

json to_json(const SnapshotDiff& d) {
  return {{"schema", "shtd/1"}, {"from_ts", d.from_ts}, {"to_ts", d.to_ts}, {"changes", d.changes}};
}

SnapshotDiff diff_from_json(const json& j) {
  try {
    if (j.at("schema") != "shtd/1") throw Error(Errc::parse_error, "diff schema must be shtd/1");
    SnapshotDiff d{j.at("from_ts").get<Nanos>(), j.at("to_ts").get<Nanos>(), j.at("changes")};
    if (!d.changes.is_array()) throw Error(Errc::parse_error, "diff changes must be an array");
    if (d.to_ts < d.from_ts) throw Error(Errc::order_violation, "diff: timestamps out of order");
    return d;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("diff: ") + e.what());
  }
}

// ---- assembly ----

template <typename T>
const T* Series<T>::at(Nanos ts) const {
  auto it = std::upper_bound(t.begin(), t.end(), ts);
  if (it == t.begin()) return nullptr;
  return &v[static_cast<std::size_t>(it - t.begin() - 1)];
}

template <typename T>
void Series<T>::sort() {
  if (std::is_sorted(t.begin(), t.end())) return;
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return t[a] < t[b]; });
  Series<T> sorted;
  for (auto i : order) sorted.push(t[i], std::move(v[i]));
  *this = std::move(sorted);
}

template struct Series<std::uint8_t>;
template struct Series<double>;
template struct Series<std::string>;
template struct Series<TrackPoint>;
template struct Series<LabelPoint>;

TwinInputs load_inputs(const std::filesystem::path& fused_dir) {
  const pipeline::OutputLayout out{fused_dir};
  TwinInputs in;
  auto streams = pipeline::read_json(out.streams());
  auto manifest = pipeline::read_json(out.manifest());
  const auto home = pipeline::home_from_json(streams.at("home"));
  in.begin = home.reference_base_ns;
  in.end = home.reference_base_ns + seconds_to_ns(home.duration_s);
  in.room = {home.room.x_min, home.room.y_min, home.room.x_max, home.room.y_max, home.room.height};
  in.residents = home.residents;
  std::map<std::string, DeviceId, std::less<>> by_name;
  for (const auto& d : home.devices) {
    in.device_names[d.id] = d.name;
    by_name[d.name] = d.id;
    in.device_states[d.id];
  }
  for (const auto& s : streams.at("streams")) in.sensors.push_back(s.at("device_id").get<DeviceId>());
  in.provenance = {manifest.at("run_id").get<std::string>(), manifest.at("config_hash").get<std::string>()};

  try {
    for (const auto& j : pipeline::read_jsonl(out.level1())) {
      const Nanos ts = j.at("ts").get<Nanos>();
      in.presence.push(ts, j.at("kept").get<bool>() ? 1 : 0);
      if (const auto& tr = j.at("track"); !tr.is_null()) {
        in.track.push(tr.at("t").get<Nanos>(), {tr.at("x").get<double>(), tr.at("y").get<double>()});
      }
      if (auto p = j.at("posture").get<std::string>(); p != "unknown") in.posture.push(ts, p);
      if (const auto& t = j.at("temperature"); !t.is_null()) in.temperature.push(ts, t.get<double>());
      if (const auto& h = j.at("humidity"); !h.is_null()) in.humidity.push(ts, h.get<double>());
      for (const auto& [name, state] : j.at("devices").items()) {
        auto it = by_name.find(name);
        auto s = state.get<std::string>();
        if (it == by_name.end() || s == "unknown") continue;
        auto& series = in.device_states[it->second];
        if (series.v.empty() || series.v.back() != s) series.push(ts, s);
      }
    }
    if (std::filesystem::exists(out.labels())) {
      for (const auto& j : pipeline::read_jsonl(out.labels())) {
        const auto& a = j.at("activity");
        in.labels.push(j.at("end").get<Nanos>(), {a.at("label").get<std::string>(), a.at("confidence").get<double>(),
                                                  j.at("emotion").at("label").get<std::string>()});
      }
    }
    for (const auto& j : pipeline::read_jsonl(out.receipts())) {
      auto& r = in.receipts[j.at("device_id").get<DeviceId>()];
      r = j.at("receive_ns").get<std::vector<Nanos>>();
      std::sort(r.begin(), r.end());
    }
    if (std::filesystem::exists(out.transitions())) {
      for (const auto& j : pipeline::read_jsonl(out.transitions())) {
        in.sessions[j.at("device_id").get<DeviceId>()].push(j.at("at").get<Nanos>(), j.at("to").get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, fused_dir.string() + ": " + e.what());
  }
  in.presence.sort();
  in.track.sort();
  in.posture.sort();
  in.labels.sort();
  in.temperature.sort();
  in.humidity.sort();
  for (auto& [id, s] : in.sessions) s.sort();
  return in;
}

Snapshot build_snapshot(const TwinInputs& in, Nanos ts) {
  if (ts < in.begin || ts > in.end) throw Error(Errc::out_of_range, "snapshot time outside the fused run");
  Snapshot s;
  s.ts = ts;
  s.room = in.room;
  s.provenance = in.provenance;
  for (std::size_t i = 0; i < in.residents.size(); ++i) {
    ResidentState r;
    r.id = in.residents[i];
    // The fused estimates describe the first resident only.
    if (i == 0) {
      if (auto p = in.presence.at(ts)) r.present = *p != 0;
      if (auto p = in.track.at(ts)) {
        r.x = p->x;
        r.y = p->y;
      }
      if (auto p = in.posture.at(ts)) r.posture = *p;
      if (auto l = in.labels.at(ts)) {
        r.activity = l->activity;
        r.confidence = l->confidence;
        r.emotion = l->emotion;
      }
    }
    s.residents.push_back(std::move(r));
  }
  for (const auto& [id, name] : in.device_names) {
    DeviceEntry e{name, std::nullopt};
    if (auto it = in.device_states.find(id); it != in.device_states.end()) {
      if (auto st = it->second.at(ts)) e.state = *st;
    }
    s.devices[id] = std::move(e);
  }
  if (auto t = in.temperature.at(ts)) s.environment.temperature_c = *t;
  if (auto h = in.humidity.at(ts)) s.environment.humidity_rh = *h;
  for (DeviceId id : in.sensors) {
    SensorHealth h;
    if (auto it = in.receipts.find(id); it != in.receipts.end()) {
      auto r = std::upper_bound(it->second.begin(), it->second.end(), ts);
      if (r != it->second.begin()) {
        h.last_seen = *std::prev(r);
        h.session = "active";
      }
    }
    if (auto it = in.sessions.find(id); it != in.sessions.end()) {
      if (auto st = it->second.at(ts)) h.session = *st;
    }
    s.sensor_health[id] = h;
  }
  return s;
}

std::vector<Nanos> stream_times(const TwinInputs& in, double cadence_hz) {
  if (!(cadence_hz > 0) || !std::isfinite(cadence_hz)) throw Error(Errc::validation_error, "cadence must be > 0 Hz");
  const auto period = static_cast<Nanos>(std::llround(1e9 / cadence_hz));
  if (period <= 0) throw Error(Errc::validation_error, "cadence is too high");
  std::vector<Nanos> out;
  for (Nanos t = in.begin + period; t <= in.end; t += period) out.push_back(t);
  return out;
}

std::size_t write_stream(const TwinInputs& in, double cadence_hz, const std::filesystem::path& out) {
  std::string text;
  std::size_t n = 0;
  for (Nanos t : stream_times(in, cadence_hz)) {
    text += serialize(build_snapshot(in, t));
    text += '\n';
    ++n;
  }
  write_text_file(out, text);
  return n;
}

}  // namespace shf::twin
