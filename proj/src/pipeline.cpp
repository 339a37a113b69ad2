#include "shf/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "shf/decision.hpp"
#include "shf/payload.hpp"
#include "shf/storage.hpp"
#include "shf/wire.hpp"

namespace shf::pipeline {

using nlohmann::json;

namespace {

Nanos ms_to_ns(double ms) { return static_cast<Nanos>(std::llround(ms * 1e6)); }
double ns_to_ms(Nanos ns) { return static_cast<double>(ns) / 1e6; }

/// Reads optional keys from one config object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(Errc::parse_error, where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, where_ + "." + key + ": " + e.what());
    }
  }

  void get_ms(const char* key, Nanos& out) {
    double ms = ns_to_ms(out);
    get(key, ms);
    out = ms_to_ns(ms);
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), where_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(Errc::unknown_field, where_ + " has unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

void FuseConfig::validate() const {
  align.validate();
  level1.voice.validate();
  level1.tracker.validate();
  if (level1.force_threshold <= 0) throw Error(Errc::validation_error, "level1.force_threshold must be > 0");
  if (level1.skeleton.min_cameras < 2) throw Error(Errc::validation_error, "level1.skeleton.min_cameras must be >= 2");
  if (level2.window_ns <= 0 || level2.stride_ns <= 0) {
    throw Error(Errc::validation_error, "level2 window and stride must be > 0");
  }
  if (level2.min_dwell < 1) throw Error(Errc::validation_error, "level2.min_dwell must be >= 1");
  if (level2.gait.min_interval_ns <= 0 || level2.gait.max_interval_ns < level2.gait.min_interval_ns) {
    throw Error(Errc::validation_error, "level2.gait intervals are inconsistent");
  }
  if (passes < 1) throw Error(Errc::validation_error, "passes must be >= 1");
}

json to_json(const FuseConfig& c) {
  json windows = json::object();
  for (int m = 0; m < kModalityCount; ++m) {
    auto mod = static_cast<Modality>(m);
    windows[std::string(modality_name(mod))] = ns_to_ms(c.align.window(mod));
  }
  const auto& l1 = c.level1;
  const auto& l2 = c.level2;
  return {
      {"schema", kConfigSchema},
      {"seed", c.seed},
      {"passes", c.passes},
      {"align",
       {{"primary", modality_name(c.align.primary)},
        {"policy", align::policy_name(c.align.policy)},
        {"emit_when_primary_missing", c.align.emit_when_primary_missing},
        {"windows_ms", windows}}},
      {"level1",
       {{"force_threshold", l1.force_threshold},
        {"voice",
         {{"on_threshold", l1.voice.on_threshold},
          {"off_threshold", l1.voice.off_threshold},
          {"hangover_ms", ns_to_ms(l1.voice.hangover_ns)}}},
        {"skeleton", {{"min_confidence", l1.skeleton.min_confidence}, {"min_cameras", l1.skeleton.min_cameras}}},
        {"tracker",
         {{"camera_weight", l1.tracker.camera_weight},
          {"floor_weight", l1.tracker.floor_weight},
          {"smoothing", l1.tracker.smoothing}}}}},
      {"level2",
       {{"window_ms", ns_to_ms(l2.window_ns)},
        {"stride_ms", ns_to_ms(l2.stride_ns)},
        {"min_dwell", l2.min_dwell},
        {"rules", l2.rules},
        {"gait",
         {{"peak_ratio", l2.gait.peak_ratio},
          {"min_force", l2.gait.min_force},
          {"min_interval_ms", ns_to_ms(l2.gait.min_interval_ns)},
          {"max_interval_ms", ns_to_ms(l2.gait.max_interval_ns)}}}}},
      {"level3", {{"rules", c.level3.rules}}},
  };
}

FuseConfig parse_fuse_config(std::string_view text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("fuse config: ") + e.what());
  }
  FuseConfig c;
  c.base_dir = base_dir;
  Section root(doc, "config");
  std::string schema;
  root.get("schema", schema);
  if (schema != kConfigSchema) throw Error(Errc::parse_error, "fuse config schema must be " + std::string(kConfigSchema));
  root.get("seed", c.seed);
  root.get("passes", c.passes);
  if (auto a = root.sub("align")) {
    std::string primary(modality_name(c.align.primary)), policy(align::policy_name(c.align.policy));
    a->get("primary", primary);
    a->get("policy", policy);
    a->get("emit_when_primary_missing", c.align.emit_when_primary_missing);
    auto m = parse_modality(primary);
    if (!m) throw Error(Errc::validation_error, "align.primary: unknown modality '" + primary + "'");
    c.align.primary = *m;
    c.align.policy = align::parse_policy(policy);
    if (auto w = a->sub("windows_ms")) {
      for (int i = 0; i < kModalityCount; ++i) {
        w->get_ms(std::string(modality_name(static_cast<Modality>(i))).c_str(),
                  c.align.window_ns[static_cast<std::size_t>(i)]);
      }
      w->finish();
    }
    a->finish();
  }
  if (auto l1 = root.sub("level1")) {
    l1->get("force_threshold", c.level1.force_threshold);
    if (auto v = l1->sub("voice")) {
      v->get("on_threshold", c.level1.voice.on_threshold);
      v->get("off_threshold", c.level1.voice.off_threshold);
      v->get_ms("hangover_ms", c.level1.voice.hangover_ns);
      v->finish();
    }
    if (auto s = l1->sub("skeleton")) {
      s->get("min_confidence", c.level1.skeleton.min_confidence);
      s->get("min_cameras", c.level1.skeleton.min_cameras);
      s->finish();
    }
    if (auto t = l1->sub("tracker")) {
      t->get("camera_weight", c.level1.tracker.camera_weight);
      t->get("floor_weight", c.level1.tracker.floor_weight);
      t->get("smoothing", c.level1.tracker.smoothing);
      t->finish();
    }
    l1->finish();
  }
  if (auto l2 = root.sub("level2")) {
    l2->get_ms("window_ms", c.level2.window_ns);
    l2->get_ms("stride_ms", c.level2.stride_ns);
    l2->get("min_dwell", c.level2.min_dwell);
    l2->get("rules", c.level2.rules);
    if (auto g = l2->sub("gait")) {
      g->get("peak_ratio", c.level2.gait.peak_ratio);
      g->get("min_force", c.level2.gait.min_force);
      g->get_ms("min_interval_ms", c.level2.gait.min_interval_ns);
      g->get_ms("max_interval_ms", c.level2.gait.max_interval_ns);
      g->finish();
    }
    l2->finish();
  }
  if (auto l3 = root.sub("level3")) {
    l3->get("rules", c.level3.rules);
    l3->finish();
  }
  root.finish();
  c.validate();
  return c;
}

FuseConfig load_fuse_config(const std::filesystem::path& path) {
  return parse_fuse_config(read_text_file(path), path.parent_path());
}

std::uint64_t config_hash(const FuseConfig& c) {
  std::string material = to_json(c).dump();
  material += '\n';
  material += read_text_file(c.level2_rules_path());
  material += '\n';
  material += read_text_file(c.level3_rules_path());
  return sensors::fnv1a64(material);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---- home ----

std::vector<std::string> Home::device_names() const {
  std::vector<std::string> out;
  for (const auto& d : devices) out.push_back(d.name);
  return out;
}

std::map<std::string, DeviceId> Home::device_ids() const {
  std::map<std::string, DeviceId> out;
  for (const auto& d : devices) out[d.name] = d.id;
  return out;
}

std::optional<std::string> Home::device_name(DeviceId id) const {
  for (const auto& d : devices) {
    if (d.id == id) return d.name;
  }
  return std::nullopt;
}

json to_json(const Home& h) {
  json devices = json::array();
  for (const auto& d : h.devices) devices.push_back({{"id", d.id}, {"name", d.name}});
  return {{"start_time_of_day_s", h.start_time_of_day_s},
          {"duration_s", h.duration_s},
          {"reference_base_ns", h.reference_base_ns},
          {"room",
           {{"x_min", h.room.x_min},
            {"y_min", h.room.y_min},
            {"x_max", h.room.x_max},
            {"y_max", h.room.y_max},
            {"height", h.room.height}}},
          {"devices", devices},
          {"residents", h.residents},
          {"heartbeat_interval_s", h.heartbeat_interval_s}};
}

Home home_from_json(const json& j) {
  try {
    Home h;
    h.start_time_of_day_s = j.at("start_time_of_day_s").get<double>();
    h.duration_s = j.at("duration_s").get<double>();
    h.reference_base_ns = j.value("reference_base_ns", Nanos{0});
    const auto& r = j.at("room");
    h.room = {r.at("x_min").get<double>(), r.at("y_min").get<double>(), r.at("x_max").get<double>(),
              r.at("y_max").get<double>(), r.at("height").get<double>()};
    for (const auto& d : j.at("devices")) {
      sensors::Device dev;
      dev.id = d.at("id").get<DeviceId>();
      dev.name = d.at("name").get<std::string>();
      h.devices.push_back(dev);
    }
    h.residents = j.at("residents").get<std::vector<std::string>>();
    h.heartbeat_interval_s = j.value("heartbeat_interval_s", 1.0);
    return h;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("home: ") + e.what());
  }
}

// ---- log ingestion ----

std::string_view mapping_kind_name(MappingKind k) {
  switch (k) {
    case MappingKind::fitted: return "fitted";
    case MappingKind::offset_only: return "offset_only";
    case MappingKind::identity: return "identity";
  }
  return "identity";
}

std::vector<timebase::EpochRound> group_epochs(const std::vector<timebase::SyncRound>& rounds, Nanos gap) {
  std::vector<timebase::SyncRound> sorted = rounds;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t0 < b.t0; });
  std::vector<timebase::EpochRound> out;
  Nanos epoch = 0, prev = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i == 0 || sorted[i].t0 - prev > gap) epoch = sorted[i].t0;
    prev = sorted[i].t0;
    out.push_back({sorted[i], epoch});
  }
  return out;
}

std::pair<timebase::ClockMapping, MappingKind> fit_device_mapping(const std::vector<timebase::SyncRound>& rounds,
                                                                  int* epochs) {
  // Malformed rounds (negative delay) carry no usable offset.
  std::vector<timebase::SyncRound> usable;
  for (const auto& r : rounds) {
    if ((r.t3 - r.t0) - (r.t2 - r.t1) >= 0) usable.push_back(r);
  }
  auto grouped = group_epochs(usable);
  std::set<Nanos> ids;
  for (const auto& g : grouped) ids.insert(g.epoch_ref);
  if (epochs) *epochs = static_cast<int>(ids.size());
  if (ids.size() >= 2) return {timebase::fit_mapping(grouped), MappingKind::fitted};
  if (ids.size() == 1) {
    const timebase::SyncRound* best = nullptr;
    Nanos best_delay = 0;
    for (const auto& g : grouped) {
      auto od = timebase::estimate_offset_delay(g.round);
      if (!best || od.delay_ns < best_delay) {
        best = &g.round;
        best_delay = od.delay_ns;
      }
    }
    timebase::ClockMapping m;
    m.offset_ns = timebase::estimate_offset_delay(*best).offset_ns;
    m.fitted_at = *ids.begin();
    return {m, MappingKind::offset_only};
  }
  return {timebase::ClockMapping::identity(), MappingKind::identity};
}

LoadedLog load_log(const std::filesystem::path& log_dir) {
  if (!std::filesystem::is_directory(log_dir) || storage::list_segments(log_dir).empty()) {
    throw Error(Errc::missing_input, "no log segments under " + log_dir.string());
  }
  LoadedLog out;
  storage::LogReader reader(log_dir);
  std::optional<Home> home;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto hash_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  std::map<DeviceId, DeviceLog> pending;  // devices seen before their HELLO
  reader.iterate(0, UINT64_MAX, [&](storage::RecordRef ref, std::uint64_t receive, std::span<const std::uint8_t> frame) {
    ++out.records;
    hash_bytes(&receive, sizeof receive);
    hash_bytes(frame.data(), frame.size());
    auto decoded = wire::try_decode_frame(frame);
    if (!decoded.ok()) {
      ++out.undecodable;
      return;
    }
    const auto& f = std::get<wire::Frame>(decoded.value);
    auto& dev = out.devices[f.device_id];
    dev.receipts.push_back(static_cast<Nanos>(receive));
    switch (f.msg_type) {
      case wire::MsgType::hello: {
        if (!dev.hello.empty()) break;
        try {
          dev.hello.assign(f.payload.begin(), f.payload.end());
          auto d = json::parse(dev.hello);
          dev.spec = sensors::sensor_from_descriptor(d);
          if (!home) home = home_from_json(d.at("home"));
        } catch (const json::exception& e) {
          throw Error(Errc::parse_error, "HELLO from device " + std::to_string(f.device_id) + ": " + e.what());
        }
        break;
      }
      case wire::MsgType::sample:
        dev.samples.push_back({static_cast<Nanos>(f.device_timestamp_ns), ref});
        break;
      case wire::MsgType::timeresp: {
        auto r = decode_time_response(f.payload);
        dev.rounds.push_back({static_cast<Nanos>(r.t0), static_cast<Nanos>(r.t1), static_cast<Nanos>(r.t2),
                              static_cast<Nanos>(receive)});
        break;
      }
      default:
        break;
    }
  });
  out.corruption = reader.corruption();
  out.content_hash = h;
  for (auto it = out.devices.begin(); it != out.devices.end();) {
    if (it->second.hello.empty()) {
      out.undescribed += it->second.receipts.size();
      it = out.devices.erase(it);
      continue;
    }
    auto& dev = it->second;
    std::stable_sort(dev.samples.begin(), dev.samples.end(),
                     [](const auto& a, const auto& b) { return a.device_ts < b.device_ts; });
    auto [mapping, kind] = fit_device_mapping(dev.rounds, &dev.epochs);
    dev.mapping = mapping;
    dev.mapping_kind = kind;
    ++it;
  }
  if (!home) throw Error(Errc::validation_error, "no device in " + log_dir.string() + " sent a HELLO");
  out.home = *home;
  return out;
}

// ---- Level 1 record JSON ----

namespace {

json opt_num(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt_bool(const std::optional<bool>& v) { return v ? json(*v) : json(nullptr); }
json opt_xy(const std::optional<Eigen::Vector2d>& v) { return v ? json::array({v->x(), v->y()}) : json(nullptr); }

std::optional<double> num_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}
std::optional<bool> bool_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<bool>();
}
std::optional<Eigen::Vector2d> xy_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return Eigen::Vector2d(j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>());
}

}  // namespace

json to_json(const Level1Record& r) {
  const auto& f = r.features;
  json track = nullptr, floor = nullptr;
  if (f.track) track = {{"t", f.track->t}, {"x", f.track->x}, {"y", f.track->y}, {"speed", f.track->speed}};
  if (f.floor) floor = {{"t", f.floor->t}, {"total", f.floor->total}};
  return {{"ts", f.ts},
          {"kept", f.kept},
          {"reason", r.reason},
          {"disagreement", r.disagreement},
          {"relaxed", r.relaxed},
          {"occupied", opt_bool(f.occupied)},
          {"camera_person", opt_bool(f.camera_person)},
          {"voice_active", opt_bool(f.voice_active)},
          {"voice_energy", f.voice_energy},
          {"posture", posture_name(f.posture)},
          {"camera_root", opt_xy(r.camera_root)},
          {"floor_centroid", opt_xy(r.floor_centroid)},
          {"track", track},
          {"floor", floor},
          {"temperature", opt_num(f.temperature_c)},
          {"humidity", opt_num(f.humidity_rh)},
          {"devices", f.devices}};
}

Level1Record level1_from_json(const json& j) {
  try {
    Level1Record r;
    auto& f = r.features;
    f.ts = j.at("ts").get<Nanos>();
    f.kept = j.at("kept").get<bool>();
    r.reason = j.value("reason", "");
    r.disagreement = j.value("disagreement", false);
    r.relaxed = j.value("relaxed", false);
    f.occupied = bool_from(j, "occupied");
    f.camera_person = bool_from(j, "camera_person");
    f.voice_active = bool_from(j, "voice_active");
    f.voice_energy = j.value("voice_energy", 0.0);
    f.posture = parse_posture(j.at("posture").get<std::string>());
    r.camera_root = xy_from(j, "camera_root");
    r.floor_centroid = xy_from(j, "floor_centroid");
    if (j.contains("track") && !j.at("track").is_null()) {
      const auto& t = j.at("track");
      f.track = features::TrackPoint{t.at("t").get<Nanos>(), t.at("x").get<double>(), t.at("y").get<double>(),
                                     t.at("speed").get<double>()};
    }
    if (j.contains("floor") && !j.at("floor").is_null()) {
      f.floor = features::ForceSample{j.at("floor").at("t").get<Nanos>(), j.at("floor").at("total").get<double>()};
    }
    f.temperature_c = num_from(j, "temperature");
    f.humidity_rh = num_from(j, "humidity");
    f.devices = j.at("devices").get<std::map<std::string, std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("level1 record: ") + e.what());
  }
}

json to_json(const Level1Summary& s) {
  return {{"records", s.records},       {"kept", s.kept},         {"dropped", s.dropped},
          {"relaxed", s.relaxed},       {"disagreements", s.disagreements}, {"skeletons", s.skeletons},
          {"reasons", s.reasons}};
}

// ---- file helpers ----

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  auto text = read_text_file(path);
  std::vector<json> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    if (nl > pos) {
      try {
        out.push_back(json::parse(std::string_view(text).substr(pos, nl - pos)));
      } catch (const json::exception& e) {
        throw Error(Errc::parse_error, path.string() + ": " + e.what());
      }
    }
    pos = nl + 1;
  }
  return out;
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

namespace {

class LineWriter {
 public:
  explicit LineWriter(std::filesystem::path path) : path_(std::move(path)) {}
  void add(const json& j) {
    buffer_ += j.dump();
    buffer_ += '\n';
  }
  void commit() { write_text_file(path_, buffer_); }

 private:
  std::filesystem::path path_;
  std::string buffer_;
};

}  // namespace

// ---- Level 0 ----

void run_level0(const LoadedLog& log, const FuseConfig& config, const OutputLayout& out) {
  std::vector<align::Stream> streams;
  json stream_desc = json::array();
  json mappings = json::array();
  for (const auto& [id, dev] : log.devices) {
    align::Stream s;
    s.device_id = id;
    s.modality = dev.spec.modality;
    s.rate_hz = dev.spec.rate_hz;
    s.mapping = dev.mapping;
    s.samples = dev.samples;
    streams.push_back(std::move(s));
    stream_desc.push_back({{"device_id", id},
                           {"modality", modality_name(dev.spec.modality)},
                           {"rate_hz", dev.spec.rate_hz},
                           {"samples", dev.samples.size()},
                           {"descriptor", json::parse(dev.hello)}});
    mappings.push_back({{"device_id", id},
                        {"kind", mapping_kind_name(dev.mapping_kind)},
                        {"epochs", dev.epochs},
                        {"rounds", dev.rounds.size()},
                        {"offset_ns", dev.mapping.offset_ns},
                        {"drift_ppm", dev.mapping.drift_ppm},
                        {"fitted_at", dev.mapping.fitted_at},
                        {"validity_window_ns", dev.mapping.validity_window_ns}});
  }
  auto result = align::align(streams, config.align);
  auto coverage = align::coverage_report(result, streams);

  LineWriter aligned(out.aligned());
  for (const auto& rec : result.records) {
    json slots = json::array();
    for (const auto& slot : rec.slots) {
      if (!slot) {
        slots.push_back(nullptr);
      } else {
        slots.push_back(json::array({slot->sample, slot->ref.segment, slot->ref.offset, slot->sample_ts}));
      }
    }
    aligned.add({{"ts", rec.ref_ts}, {"slots", slots}});
  }
  aligned.commit();

  LineWriter receipts(out.receipts());
  for (const auto& [id, dev] : log.devices) receipts.add({{"device_id", id}, {"receive_ns", dev.receipts}});
  receipts.commit();

  json cov = align::to_json(coverage);
  cov["primary_device"] = streams[result.primary_stream].device_id;
  cov["duplicate_primary"] = result.duplicate_primary;
  cov["synthetic_ticks"] = result.synthetic_ticks;
  write_json(out.coverage(), cov);
  write_json(out.mappings(), mappings);
  write_json(out.streams(), {{"home", to_json(log.home)},
                             {"primary_device", streams[result.primary_stream].device_id},
                             {"streams", stream_desc}});
}

// ---- Level 1 ----

namespace {

struct StreamInfo {
  DeviceId device_id = 0;
  sensors::SensorSpec spec;
};

/// Decodes stored sample payloads, keeping the last one per stream.
class PayloadCache {
 public:
  PayloadCache(const std::filesystem::path& log_dir, std::size_t streams)
      : reader_(log_dir), last_(streams) {}

  /// Payload of stream `s`'s sample `index`; `fresh` tells whether it differs
  /// from the previous request on that stream.
  const SamplePayload& get(std::size_t s, std::size_t index, storage::RecordRef ref, Modality m, bool& fresh) {
    auto& slot = last_[s];
    fresh = !slot || slot->first != index;
    if (fresh) {
      auto rec = reader_.read(ref);
      auto frame = wire::decode_frame(rec.frame_bytes);
      slot.emplace(index, decode_payload(m, frame.payload));
    }
    return slot->second;
  }

 private:
  storage::LogReader reader_;
  std::vector<std::optional<std::pair<std::size_t, SamplePayload>>> last_;
};

const PersonObservation* first_detected(const CameraObservation& obs) {
  if (!obs.person_detected) return nullptr;
  for (const auto& p : obs.persons) {
    if (p.detected) return &p;
  }
  return nullptr;
}

std::vector<std::pair<Nanos, Nanos>> merge_spans(std::vector<std::pair<Nanos, Nanos>> spans) {
  std::sort(spans.begin(), spans.end());
  std::vector<std::pair<Nanos, Nanos>> out;
  for (const auto& s : spans) {
    if (!out.empty() && s.first <= out.back().second) {
      out.back().second = std::max(out.back().second, s.second);
    } else {
      out.push_back(s);
    }
  }
  return out;
}

/// `spans` disjoint and sorted.
bool covered(const std::vector<std::pair<Nanos, Nanos>>& spans, Nanos t) {
  auto it = std::upper_bound(spans.begin(), spans.end(), t, [](Nanos v, const auto& s) { return v < s.first; });
  return it != spans.begin() && t < std::prev(it)->second;
}

}  // namespace

Level1Summary run_level1(const std::filesystem::path& log_dir, const FuseConfig& config, const OutputLayout& out,
                         const std::vector<std::pair<Nanos, Nanos>>& relax) {
  auto desc = read_json(out.streams());
  auto rows = read_jsonl(out.aligned());
  Home home = home_from_json(desc.at("home"));
  std::vector<StreamInfo> streams;
  for (const auto& s : desc.at("streams")) {
    streams.push_back({s.at("device_id").get<DeviceId>(), sensors::sensor_from_descriptor(s.at("descriptor"))});
  }
  auto relax_sorted = merge_spans(relax);

  PayloadCache cache(log_dir, streams.size());
  features::VoiceDetector voice(config.level1.voice);
  features::Tracker tracker(config.level1.tracker);
  std::map<std::string, std::string> devices;
  for (const auto& d : home.devices) devices[d.name] = "unknown";
  std::optional<features::VoiceActivity> last_voice;

  Level1Summary summary;
  LineWriter writer(out.level1());
  for (const auto& row : rows) {
    Level1Record rec;
    auto& f = rec.features;
    f.ts = row.at("ts").get<Nanos>();
    const auto& slots = row.at("slots");
    if (slots.size() != streams.size()) throw Error(Errc::dimension_mismatch, "aligned record has wrong slot count");

    std::vector<features::CameraView> views;
    bool any_camera = false, any_person = false;
    bool any_mic = false;
    for (std::size_t s = 0; s < streams.size(); ++s) {
      if (slots[s].is_null()) continue;
      const auto& spec = streams[s].spec;
      auto index = slots[s][0].get<std::size_t>();
      storage::RecordRef ref{slots[s][1].get<std::uint32_t>(), slots[s][2].get<std::uint64_t>()};
      Nanos sample_ts = slots[s][3].get<Nanos>();
      bool fresh = false;
      const auto& payload = cache.get(s, index, ref, spec.modality, fresh);
      switch (spec.modality) {
        case Modality::camera: {
          const auto& obs = std::get<CameraObservation>(payload);
          any_camera = true;
          if (const auto* p = first_detected(obs)) {
            any_person = true;
            if (spec.pose && spec.intrinsics) views.push_back({*spec.pose, *spec.intrinsics, *p});
          }
          break;
        }
        case Modality::microphone: {
          const auto& a = std::get<AudioSample>(payload);
          if (fresh) last_voice = voice.update(sample_ts, a);
          any_mic = true;
          break;
        }
        case Modality::floor_pressure: {
          if (!spec.grid) break;
          const auto& frame = std::get<FloorFrame>(payload);
          auto occ = features::detect_occupancy(frame, *spec.grid, config.level1.force_threshold);
          f.occupied = f.occupied.value_or(false) || occ.occupied;
          if (occ.occupied && occ.centroid && !rec.floor_centroid) rec.floor_centroid = occ.centroid;
          if (!f.floor) f.floor = features::ForceSample{sample_ts, occ.total_force};
          break;
        }
        case Modality::environment: {
          const auto& e = std::get<EnvSample>(payload);
          f.temperature_c = e.temperature_c;
          f.humidity_rh = e.humidity_rh;
          break;
        }
        case Modality::device_usage: {
          const auto& u = std::get<UsageSample>(payload);
          if (auto name = home.device_name(u.device_id)) devices[*name] = u.state;
          break;
        }
      }
    }
    if (any_camera) f.camera_person = any_person;
    if (any_mic && last_voice) {
      f.voice_active = last_voice->active;
      f.voice_energy = last_voice->energy;
    }
    if (views.size() >= config.level1.skeleton.min_cameras) {
      auto skel = features::reconstruct_skeleton(views, config.level1.skeleton);
      rec.camera_root = skel.root;
      f.posture = state::posture_code(skel);
      ++summary.skeletons;
    }
    if (rec.camera_root || rec.floor_centroid) f.track = tracker.update(f.ts, rec.camera_root, rec.floor_centroid);
    f.devices = devices;

    rec.relaxed = covered(relax_sorted, f.ts);
    auto d = features::filter_record({f.occupied, f.voice_active, f.camera_person}, rec.relaxed);
    f.kept = d.kept;
    rec.reason = d.reason;
    rec.disagreement = d.voice_vision_disagreement;

    ++summary.records;
    if (f.kept) {
      ++summary.kept;
    } else {
      ++summary.dropped;
      ++summary.reasons[rec.reason];
    }
    if (rec.relaxed) ++summary.relaxed;
    if (rec.disagreement) ++summary.disagreements;
    writer.add(to_json(rec));
  }
  writer.commit();
  write_json(out.level1_summary(), to_json(summary));
  return summary;
}

// ---- Level 2 ----

void run_level2(const FuseConfig& config, const OutputLayout& out) {
  auto desc = read_json(out.streams());
  Home home = home_from_json(desc.at("home"));
  std::vector<state::FrameFeatures> frames;
  for (const auto& j : read_jsonl(out.level1())) frames.push_back(level1_from_json(j).features);
  auto rules = state::load_rules(config.level2_rules_path(), home.device_names());

  state::WindowConfig wc;
  wc.window_ns = config.level2.window_ns;
  wc.stride_ns = config.level2.stride_ns;
  wc.start_time_of_day_s = home.start_time_of_day_s;
  wc.voice = config.level1.voice;
  wc.gait = config.level2.gait;
  const Nanos span_start = home.reference_base_ns;
  const Nanos span_end = home.reference_base_ns + seconds_to_ns(home.duration_s);
  auto windows = state::window_features(frames, span_start, span_end, wc);

  std::vector<state::Label> activity, emotion;
  for (const auto& w : windows) {
    activity.push_back(state::classify(w, rules.activity));
    emotion.push_back(state::classify(w, rules.emotion));
  }
  state::smooth(activity, config.level2.min_dwell);
  state::smooth(emotion, config.level2.min_dwell);

  LineWriter wout(out.windows()), lout(out.labels());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    wout.add(state::to_json(windows[i]));
    lout.add(state::to_json(state::WindowLabels{activity[i], emotion[i]}));
  }
  wout.commit();
  lout.commit();
}

std::vector<std::pair<Nanos, Nanos>> sleeping_spans(const OutputLayout& out) {
  std::vector<std::pair<Nanos, Nanos>> spans;
  for (const auto& j : read_jsonl(out.labels())) {
    auto l = state::labels_from_json(j);
    if (l.activity.label == "sleeping") spans.emplace_back(l.activity.start, l.activity.end);
  }
  return spans;
}

// ---- Level 3 ----

void run_level3(const FuseConfig& config, const OutputLayout& out) {
  auto desc = read_json(out.streams());
  Home home = home_from_json(desc.at("home"));
  auto windows = read_jsonl(out.windows());
  auto labels = read_jsonl(out.labels());
  if (windows.size() != labels.size()) throw Error(Errc::dimension_mismatch, "windows and labels differ in length");
  auto rules = decision::load_rules(config.level3_rules_path(), home.device_names());
  const std::string resident = home.residents.empty() ? std::string("resident") : home.residents.front();
  decision::Engine engine(decision::apply_overrides(rules, resident), resident, home.device_ids());

  LineWriter cmds(out.commands()), trace(out.decision_trace());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto w = state::window_from_json(windows[i]);
    auto l = state::labels_from_json(labels[i]);
    decision::WindowState ws;
    ws.ts = w.end;
    ws.activity = l.activity.label;
    ws.emotion = l.emotion.label;
    ws.activity_confidence = l.activity.confidence;
    ws.emotion_confidence = l.emotion.confidence;
    ws.temperature_c = w.temperature_c;
    ws.humidity_rh = w.humidity_rh;
    ws.time_of_day_s = w.time_of_day_s;
    ws.night = w.night;
    ws.occupancy_fraction = w.occupancy_fraction;
    ws.devices = w.devices;
    auto entry = engine.step(ws);
    for (const auto& c : entry.commands) cmds.add(decision::to_json(c));
    trace.add(decision::to_json(entry));
  }
  cmds.commit();
  trace.commit();
}

// ---- orchestration ----

std::pair<int, int> parse_level_range(std::string_view text) {
  auto parse_int = [&](std::string_view s) {
    int v = -1;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v < 0 || v > 3) {
      throw Error(Errc::validation_error, "levels must be within 0..3, got '" + std::string(text) + "'");
    }
    return v;
  };
  auto dots = text.find("..");
  if (dots == std::string_view::npos) {
    int v = parse_int(text);
    return {v, v};
  }
  int lo = parse_int(text.substr(0, dots)), hi = parse_int(text.substr(dots + 2));
  if (lo > hi) throw Error(Errc::validation_error, "empty level range '" + std::string(text) + "'");
  return {lo, hi};
}

namespace {

void require(const std::filesystem::path& p, int level) {
  if (!std::filesystem::exists(p)) {
    throw Error(Errc::missing_input, "level " + std::to_string(level) + " output " + p.filename().string() +
                                         " is missing; run the earlier levels first");
  }
}

void copy_if_present(const std::filesystem::path& from, const std::filesystem::path& to) {
  if (std::filesystem::exists(from)) write_text_file(to, read_text_file(from));
}

}  // namespace

FuseResult fuse(const std::filesystem::path& log_dir, const FuseConfig& config, const std::filesystem::path& out_dir,
                int first_level, int last_level) {
  if (first_level < 0 || last_level > 3 || first_level > last_level) {
    throw Error(Errc::validation_error, "invalid level range");
  }
  config.validate();
  std::filesystem::create_directories(out_dir);
  OutputLayout out{out_dir};
  FuseResult result;
  result.config_hash = config_hash(config);

  auto log = load_log(log_dir);
  result.run_id = hex64(sensors::fnv1a64(hex64(log.content_hash) + hex64(result.config_hash)));

  // Outputs of the levels about to run (and later ones) are stale.
  const std::vector<std::vector<std::filesystem::path>> by_level = {
      {out.streams(), out.mappings(), out.aligned(), out.coverage(), out.receipts(), out.collector_counters(),
       out.transitions()},
      {out.level1(), out.level1_summary()},
      {out.windows(), out.labels()},
      {out.commands(), out.decision_trace()}};
  for (int l = first_level; l <= 3; ++l) {
    for (const auto& p : by_level[static_cast<std::size_t>(l)]) std::filesystem::remove(p);
  }

  if (first_level > 0) require(out.aligned(), 0);
  if (first_level > 1) require(out.level1(), 1);
  if (first_level > 2) require(out.labels(), 2);

  if (first_level == 0) {
    run_level0(log, config, out);
    // Collector reports that travel with the log.
    copy_if_present(log_dir.parent_path() / "counters.json", out.collector_counters());
    copy_if_present(log_dir.parent_path() / "transitions.jsonl", out.transitions());
  }
  const bool l1 = first_level <= 1 && last_level >= 1;
  const bool l2 = first_level <= 2 && last_level >= 2;
  if (l1) result.passes.push_back(run_level1(log_dir, config, out));
  if (l2) run_level2(config, out);
  // Later passes lift drops inside windows the previous pass called sleeping.
  if (l1 && l2) {
    for (int p = 2; p <= config.passes; ++p) {
      result.passes.push_back(run_level1(log_dir, config, out, sleeping_spans(out)));
      run_level2(config, out);
    }
  }
  if (last_level >= 3) run_level3(config, out);

  json passes = json::array();
  for (const auto& s : result.passes) passes.push_back(to_json(s));
  json outputs = json::object();
  for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
    auto name = entry.path().filename().string();
    if (name == "manifest.json" || !entry.is_regular_file()) continue;
    outputs[name] = hex64(sensors::fnv1a64(read_text_file(entry.path())));
  }
  json corruption = json::array();
  for (const auto& c : log.corruption) {
    corruption.push_back({{"segment", c.segment}, {"file", c.file}, {"offset", c.offset}, {"kind", c.kind}});
  }
  write_json(out.manifest(), {{"schema", "shfm/1"},
                              {"run_id", result.run_id},
                              {"config_hash", hex64(result.config_hash)},
                              {"config", to_json(config)},
                              {"levels", {first_level, last_level}},
                              {"log",
                               {{"content_hash", hex64(log.content_hash)},
                                {"records", log.records},
                                {"undecodable", log.undecodable},
                                {"undescribed", log.undescribed},
                                {"corruption", corruption}}},
                              {"passes", passes},
                              {"outputs", outputs}});
  return result;
}

}  // namespace shf::pipeline
