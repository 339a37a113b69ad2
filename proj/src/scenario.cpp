#include "shf/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "shf/taxonomy.hpp"

namespace shf::sensors {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(Errc::validation_error, what); }

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw Error(Errc::parse_error, where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(Errc::parse_error, "unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : it->get<T>();
}

Region parse_region(const json& j, const std::string& where) {
  check_keys(j, {"x_min", "y_min", "x_max", "y_max"}, where);
  Region r{j.at("x_min").get<double>(), j.at("y_min").get<double>(), j.at("x_max").get<double>(),
           j.at("y_max").get<double>()};
  if (!(r.x_min < r.x_max && r.y_min < r.y_max)) invalid(where + " must have min < max");
  return r;
}

std::vector<LabelInterval> parse_labels(const json& arr) {
  std::vector<LabelInterval> out;
  for (const auto& e : arr) {
    out.push_back({e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<std::string>()});
  }
  return out;
}

std::vector<Interval> parse_intervals(const json& arr) {
  std::vector<Interval> out;
  for (const auto& e : arr) out.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
  return out;
}

std::vector<ProfilePoint> parse_profile(const json& arr) {
  std::vector<ProfilePoint> out;
  for (const auto& e : arr) out.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
  return out;
}

NoiseParams parse_noise(const json& j) {
  check_keys(j,
             {"keypoint_sigma", "keypoint_confidence", "audio_sigma", "audio_floor",
              "floor_sigma_n", "floor_deadband_n", "temperature_sigma_c", "humidity_sigma_rh"},
             "sensor.noise");
  NoiseParams n;
  n.keypoint_sigma = get_or(j, "keypoint_sigma", n.keypoint_sigma);
  n.keypoint_confidence = get_or(j, "keypoint_confidence", n.keypoint_confidence);
  n.audio_sigma = get_or(j, "audio_sigma", n.audio_sigma);
  n.audio_floor = get_or(j, "audio_floor", n.audio_floor);
  n.floor_sigma_n = get_or(j, "floor_sigma_n", n.floor_sigma_n);
  n.floor_deadband_n = get_or(j, "floor_deadband_n", n.floor_deadband_n);
  n.temperature_sigma_c = get_or(j, "temperature_sigma_c", n.temperature_sigma_c);
  n.humidity_sigma_rh = get_or(j, "humidity_sigma_rh", n.humidity_sigma_rh);
  return n;
}

json noise_to_json(const NoiseParams& n) {
  return {{"keypoint_sigma", n.keypoint_sigma},
          {"keypoint_confidence", n.keypoint_confidence},
          {"audio_sigma", n.audio_sigma},
          {"audio_floor", n.audio_floor},
          {"floor_sigma_n", n.floor_sigma_n},
          {"floor_deadband_n", n.floor_deadband_n},
          {"temperature_sigma_c", n.temperature_sigma_c},
          {"humidity_sigma_rh", n.humidity_sigma_rh}};
}

CameraPose parse_pose(const json& j) {
  check_keys(j, {"position", "orientation", "look_at"}, "sensor.pose");
  CameraPose p;
  auto pos = j.at("position");
  p.position = Eigen::Vector3d(pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>());
  if (j.contains("orientation")) {
    auto q = j.at("orientation");
    p.orientation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(),
                                       q.at(2).get<double>(), q.at(3).get<double>());
  } else if (j.contains("look_at")) {
    auto t = j.at("look_at");
    p.orientation = look_at(p.position, Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(),
                                                        t.at(2).get<double>()));
  } else {
    throw Error(Errc::parse_error, "sensor.pose needs 'orientation' or 'look_at'");
  }
  return p;
}

FloorGrid parse_grid(const json& j) {
  check_keys(j, {"cols", "rows", "pitch_m", "origin_x", "origin_y"}, "sensor.grid");
  FloorGrid g;
  g.cols = j.at("cols").get<std::uint16_t>();
  g.rows = j.at("rows").get<std::uint16_t>();
  g.pitch_m = j.at("pitch_m").get<double>();
  g.origin_x = get_or(j, "origin_x", 0.0);
  g.origin_y = get_or(j, "origin_y", 0.0);
  return g;
}

SensorSpec parse_sensor(const json& j) {
  check_keys(j,
             {"device_id", "modality", "rate_hz", "phase_s", "clock", "noise", "link", "pose",
              "intrinsics", "grid", "privacy_zone", "watch_devices"},
             "sensor");
  SensorSpec s;
  s.device_id = j.at("device_id").get<DeviceId>();
  auto mod = parse_modality(j.at("modality").get<std::string>());
  if (!mod) throw Error(Errc::parse_error, "unknown modality '" + j.at("modality").get<std::string>() + "'");
  s.modality = *mod;
  s.rate_hz = j.at("rate_hz").get<double>();
  s.phase_s = get_or(j, "phase_s", 0.0);
  if (j.contains("clock")) {
    const auto& c = j.at("clock");
    check_keys(c, {"offset_ns", "drift_ppm", "jitter_sigma_ns", "seed"}, "sensor.clock");
    s.clock.offset_ns = get_or<Nanos>(c, "offset_ns", 0);
    s.clock.drift_ppm = get_or(c, "drift_ppm", 0.0);
    s.clock.jitter_sigma_ns = get_or(c, "jitter_sigma_ns", 0.0);
    s.clock.seed = get_or<std::uint64_t>(c, "seed", s.device_id);
  } else {
    s.clock.seed = s.device_id;
  }
  if (j.contains("noise")) s.noise = parse_noise(j.at("noise"));
  if (j.contains("link")) {
    const auto& l = j.at("link");
    check_keys(l, {"latency_ms", "latency_jitter_ms", "loss_prob", "corrupt_prob"}, "sensor.link");
    s.link.latency_ns = seconds_to_ns(get_or(l, "latency_ms", 1.0) * 1e-3);
    s.link.latency_jitter_ns = seconds_to_ns(get_or(l, "latency_jitter_ms", 0.2) * 1e-3);
    s.link.loss_prob = get_or(l, "loss_prob", 0.0);
    s.link.corrupt_prob = get_or(l, "corrupt_prob", 0.0);
  }
  if (j.contains("pose")) s.pose = parse_pose(j.at("pose"));
  if (j.contains("intrinsics")) {
    const auto& k = j.at("intrinsics");
    check_keys(k, {"fx", "fy", "cx", "cy"}, "sensor.intrinsics");
    Intrinsics in;
    in.fx = get_or(k, "fx", in.fx);
    in.fy = get_or(k, "fy", in.fy);
    in.cx = get_or(k, "cx", in.cx);
    in.cy = get_or(k, "cy", in.cy);
    s.intrinsics = in;
  } else if (s.modality == Modality::camera) {
    s.intrinsics = Intrinsics{};
  }
  if (j.contains("grid")) s.grid = parse_grid(j.at("grid"));
  if (j.contains("privacy_zone")) s.privacy_zone = parse_region(j.at("privacy_zone"), "sensor.privacy_zone");
  if (j.contains("watch_devices")) s.watch_devices = j.at("watch_devices").get<std::vector<DeviceId>>();
  return s;
}

template <typename Iv>
void check_timeline(const std::vector<Iv>& ivs, double duration, const std::string& what) {
  for (std::size_t i = 0; i < ivs.size(); ++i) {
    if (!(ivs[i].start < ivs[i].end)) invalid(what + " interval " + std::to_string(i) + " has start >= end");
    if (ivs[i].start < 0 || ivs[i].end > duration) {
      invalid(what + " interval " + std::to_string(i) + " lies outside [0, duration]");
    }
    if (i > 0 && ivs[i].start < ivs[i - 1].end) {
      invalid(what + " intervals overlap or are unsorted at index " + std::to_string(i));
    }
  }
}

}  // namespace

void SensorSpec::validate() const {
  const std::string who = "sensor " + std::to_string(device_id);
  if (!(rate_hz > 0.0 && rate_hz <= 1000.0)) invalid(who + ": rate_hz must be in (0, 1000]");
  if (phase_s < 0.0) invalid(who + ": phase_s must be >= 0");
  clock.validate();
  if (modality == Modality::camera) {
    if (!pose) invalid(who + ": camera requires a pose");
    if (std::abs(pose->orientation.norm() - 1.0) > 1e-6) {
      invalid(who + ": camera orientation must be a unit quaternion");
    }
    if (!intrinsics || intrinsics->fx <= 0 || intrinsics->fy <= 0) {
      invalid(who + ": camera focal lengths must be positive");
    }
  }
  if (modality == Modality::floor_pressure) {
    if (!grid) invalid(who + ": floor sensor requires a grid");
    if (grid->cols == 0 || grid->rows == 0 || !(grid->pitch_m > 0)) {
      invalid(who + ": floor grid must have positive dimensions and pitch");
    }
  }
  if (modality == Modality::device_usage && watch_devices.empty()) {
    invalid(who + ": device_usage sensor must watch at least one device");
  }
  if (link.loss_prob < 0 || link.loss_prob >= 1 || link.corrupt_prob < 0 || link.corrupt_prob >= 1) {
    invalid(who + ": link probabilities must be in [0, 1)");
  }
}

const Device* Scenario::find_device(DeviceId id) const {
  for (const auto& d : devices) {
    if (d.id == id) return &d;
  }
  return nullptr;
}

const Device* Scenario::find_device(std::string_view name) const {
  for (const auto& d : devices) {
    if (d.name == name) return &d;
  }
  return nullptr;
}

const SensorSpec* Scenario::find_sensor(DeviceId id) const {
  for (const auto& s : sensors) {
    if (s.device_id == id) return &s;
  }
  return nullptr;
}

void Scenario::validate() const {
  if (!(duration_s > 0)) invalid("duration_s must be positive");
  if (!(room.x_min < room.x_max && room.y_min < room.y_max && room.height > 0)) {
    invalid("room bounds must have positive extent");
  }
  if (!(heartbeat_interval_s > 0)) invalid("heartbeat_interval_s must be positive");
  if (!(sync.interval_s > 0) || sync.exchange.rounds_per_epoch < 1) {
    invalid("sync schedule needs a positive interval and >= 1 round per epoch");
  }

  const auto& acts = default_activity_taxonomy();
  const auto& emos = default_emotion_taxonomy();
  std::set<std::string> ids;
  for (const auto& r : residents) {
    const std::string who = "resident '" + r.id + "'";
    if (!ids.insert(r.id).second) invalid("duplicate resident id '" + r.id + "'");
    if (r.waypoints.empty()) invalid(who + " has no waypoints");
    for (std::size_t i = 0; i < r.waypoints.size(); ++i) {
      const auto& w = r.waypoints[i];
      if (w.t < 0 || w.t > duration_s) invalid(who + " waypoint " + std::to_string(i) + " outside [0, duration]");
      if (i > 0 && !(w.t > r.waypoints[i - 1].t)) invalid(who + " waypoints must be strictly time-sorted");
      if (!room.contains(w.x, w.y)) invalid(who + " waypoint " + std::to_string(i) + " outside room bounds");
    }
    check_timeline(r.activity_timeline, duration_s, who + " activity");
    check_timeline(r.emotion_timeline, duration_s, who + " emotion");
    check_timeline(r.speech_intervals, duration_s, who + " speech");
    check_timeline(r.away_intervals, duration_s, who + " away");
    for (const auto& a : r.activity_timeline) {
      if (!acts.contains(a.label)) invalid(who + " uses unknown activity label '" + a.label + "'");
    }
    for (const auto& e : r.emotion_timeline) {
      if (!emos.contains(e.label)) invalid(who + " uses unknown emotion label '" + e.label + "'");
    }
    if (!(r.gait.cadence_spm > 0) || r.gait.cadence_cv < 0) invalid(who + " gait profile must be positive");
  }

  std::set<DeviceId> device_ids;
  for (const auto& d : devices) {
    if (!device_ids.insert(d.id).second) invalid("duplicate device id " + std::to_string(d.id));
  }
  for (std::size_t i = 0; i < device_events.size(); ++i) {
    const auto& e = device_events[i];
    if (!find_device(e.device_id)) invalid("device event references unknown device " + std::to_string(e.device_id));
    if (e.t < 0 || e.t > duration_s) invalid("device event outside [0, duration]");
    if (i > 0 && e.t < device_events[i - 1].t) invalid("device events must be time-sorted");
  }

  auto check_profile = [&](const std::vector<ProfilePoint>& p, const char* what) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i].t < 0 || p[i].t > duration_s) invalid(std::string(what) + " profile point outside [0, duration]");
      if (i > 0 && !(p[i].t > p[i - 1].t)) invalid(std::string(what) + " profile must be strictly time-sorted");
    }
  };
  check_profile(environment.temperature_c, "temperature");
  check_profile(environment.humidity_rh, "humidity");

  std::set<DeviceId> sensor_ids;
  for (const auto& s : sensors) {
    if (!sensor_ids.insert(s.device_id).second) invalid("duplicate sensor device_id " + std::to_string(s.device_id));
    if (device_ids.count(s.device_id)) {
      invalid("sensor device_id " + std::to_string(s.device_id) + " collides with an appliance id");
    }
    s.validate();
    for (DeviceId w : s.watch_devices) {
      if (!find_device(w)) invalid("sensor " + std::to_string(s.device_id) + " watches unknown device " + std::to_string(w));
    }
  }
  for (const auto& f : faults) {
    if (!find_sensor(f.device_id)) invalid("fault references unknown sensor " + std::to_string(f.device_id));
    if (!(f.kill_s >= 0 && f.kill_s < f.restart_s && f.restart_s <= duration_s)) {
      invalid("fault window must satisfy 0 <= kill_s < restart_s <= duration");
    }
  }
}

Scenario parse_scenario(const json& doc) {
  check_keys(doc,
             {"schema", "name", "duration_s", "seed", "start_time_of_day_s", "room", "residents",
              "devices", "device_events", "environment", "sensors", "faults",
              "heartbeat_interval_s", "sync"},
             "scenario");
  if (doc.value("schema", "") != kScenarioSchema) {
    throw Error(Errc::parse_error, "scenario schema must be \"shs/1\"");
  }
  Scenario s;
  s.name = doc.value("name", "");
  s.duration_s = doc.at("duration_s").get<double>();
  s.seed = doc.value<std::uint64_t>("seed", 0);
  s.start_time_of_day_s = doc.value("start_time_of_day_s", s.start_time_of_day_s);
  s.heartbeat_interval_s = doc.value("heartbeat_interval_s", 1.0);
  if (doc.contains("room")) {
    const auto& r = doc.at("room");
    check_keys(r, {"x_min", "y_min", "x_max", "y_max", "height"}, "room");
    s.room.x_min = get_or(r, "x_min", s.room.x_min);
    s.room.y_min = get_or(r, "y_min", s.room.y_min);
    s.room.x_max = get_or(r, "x_max", s.room.x_max);
    s.room.y_max = get_or(r, "y_max", s.room.y_max);
    s.room.height = get_or(r, "height", s.room.height);
  }
  if (doc.contains("sync")) {
    const auto& y = doc.at("sync");
    check_keys(y, {"interval_s", "rounds_per_epoch", "delay_out_ms", "delay_back_ms", "turnaround_us", "round_spacing_ms"},
               "sync");
    s.sync.interval_s = get_or(y, "interval_s", s.sync.interval_s);
    auto& e = s.sync.exchange;
    e.rounds_per_epoch = get_or(y, "rounds_per_epoch", e.rounds_per_epoch);
    e.delay_out_ns = seconds_to_ns(get_or(y, "delay_out_ms", 5.0) * 1e-3);
    e.delay_back_ns = seconds_to_ns(get_or(y, "delay_back_ms", 5.0) * 1e-3);
    e.turnaround_ns = seconds_to_ns(get_or(y, "turnaround_us", 100.0) * 1e-6);
    e.round_spacing_ns = seconds_to_ns(get_or(y, "round_spacing_ms", 20.0) * 1e-3);
  }
  for (const auto& rj : doc.value("residents", json::array())) {
    check_keys(rj, {"id", "waypoints", "activities", "emotions", "speech", "away", "gait", "body_mass_kg"},
               "resident");
    ResidentScript r;
    r.id = rj.at("id").get<std::string>();
    for (const auto& w : rj.at("waypoints")) {
      r.waypoints.push_back({w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()});
    }
    r.activity_timeline = parse_labels(rj.value("activities", json::array()));
    r.emotion_timeline = parse_labels(rj.value("emotions", json::array()));
    r.speech_intervals = parse_intervals(rj.value("speech", json::array()));
    r.away_intervals = parse_intervals(rj.value("away", json::array()));
    if (rj.contains("gait")) {
      const auto& g = rj.at("gait");
      check_keys(g, {"speed_mps", "cadence_spm", "cadence_cv"}, "resident.gait");
      r.gait.speed_mps = get_or(g, "speed_mps", r.gait.speed_mps);
      r.gait.cadence_spm = get_or(g, "cadence_spm", r.gait.cadence_spm);
      r.gait.cadence_cv = get_or(g, "cadence_cv", r.gait.cadence_cv);
    }
    r.body_mass_kg = rj.value("body_mass_kg", r.body_mass_kg);
    s.residents.push_back(std::move(r));
  }
  for (const auto& dj : doc.value("devices", json::array())) {
    check_keys(dj, {"id", "name", "initial"}, "device");
    s.devices.push_back({dj.at("id").get<DeviceId>(), dj.at("name").get<std::string>(),
                         dj.value("initial", std::string("off"))});
  }
  for (const auto& ej : doc.value("device_events", json::array())) {
    s.device_events.push_back({ej.at(0).get<double>(), ej.at(1).get<DeviceId>(), ej.at(2).get<std::string>()});
  }
  if (doc.contains("environment")) {
    const auto& ej = doc.at("environment");
    check_keys(ej, {"temperature_c", "humidity_rh"}, "environment");
    s.environment.temperature_c = parse_profile(ej.value("temperature_c", json::array()));
    s.environment.humidity_rh = parse_profile(ej.value("humidity_rh", json::array()));
  }
  for (const auto& sj : doc.value("sensors", json::array())) s.sensors.push_back(parse_sensor(sj));
  for (const auto& fj : doc.value("faults", json::array())) {
    check_keys(fj, {"device_id", "kill_s", "restart_s"}, "fault");
    s.faults.push_back({fj.at("device_id").get<DeviceId>(), fj.at("kill_s").get<double>(),
                        fj.at("restart_s").get<double>()});
  }
  s.validate();
  return s;
}

Scenario parse_scenario_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  Scenario s;
  try {
    s = parse_scenario(doc);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  s.source_hash = fnv1a64(text);
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::parse_error, "cannot open scenario file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str());
}

json sensor_descriptor(const SensorSpec& s, const Scenario& scenario) {
  json d;
  d["device_id"] = s.device_id;
  d["modality"] = std::string(modality_name(s.modality));
  d["rate_hz"] = s.rate_hz;
  d["phase_s"] = s.phase_s;
  d["noise"] = noise_to_json(s.noise);
  if (s.pose) {
    const auto& q = s.pose->orientation;
    d["pose"] = {{"position", {s.pose->position.x(), s.pose->position.y(), s.pose->position.z()}},
                 {"orientation", {q.w(), q.x(), q.y(), q.z()}}};
  }
  if (s.intrinsics) {
    d["intrinsics"] = {{"fx", s.intrinsics->fx}, {"fy", s.intrinsics->fy}, {"cx", s.intrinsics->cx},
                       {"cy", s.intrinsics->cy}};
  }
  if (s.grid) {
    d["grid"] = {{"cols", s.grid->cols}, {"rows", s.grid->rows}, {"pitch_m", s.grid->pitch_m},
                 {"origin_x", s.grid->origin_x}, {"origin_y", s.grid->origin_y}};
  }
  if (s.privacy_zone) {
    d["privacy_zone"] = {{"x_min", s.privacy_zone->x_min}, {"y_min", s.privacy_zone->y_min},
                         {"x_max", s.privacy_zone->x_max}, {"y_max", s.privacy_zone->y_max}};
  }
  if (!s.watch_devices.empty()) d["watch_devices"] = s.watch_devices;
  json devices = json::array();
  for (const auto& dev : scenario.devices) devices.push_back({{"id", dev.id}, {"name", dev.name}});
  d["home"] = {{"start_time_of_day_s", scenario.start_time_of_day_s},
               {"duration_s", scenario.duration_s},
               {"room", {{"x_min", scenario.room.x_min}, {"y_min", scenario.room.y_min},
                         {"x_max", scenario.room.x_max}, {"y_max", scenario.room.y_max},
                         {"height", scenario.room.height}}},
               {"devices", devices},
               {"residents", [&] {
                  json r = json::array();
                  for (const auto& res : scenario.residents) r.push_back(res.id);
                  return r;
                }()},
               {"heartbeat_interval_s", scenario.heartbeat_interval_s}};
  return d;
}

SensorSpec sensor_from_descriptor(const json& d) {
  json copy = d;
  copy.erase("home");
  return parse_sensor(copy);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace shf::sensors
