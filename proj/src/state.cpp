#include "shf/state.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "shf/sensors.hpp"

namespace shf::state {

using nlohmann::json;

Posture posture_code(const features::Skeleton3D& s) {
  if (s.valid_count() < kMinPostureJoints) return Posture::unknown;
  const auto& head = s.joint(Joint::head);
  const auto& lh = s.joint(Joint::left_hip);
  const auto& rh = s.joint(Joint::right_hip);
  if (!head.valid || (!lh.valid && !rh.valid)) return Posture::unknown;
  Eigen::Vector3d hip = lh.valid && rh.valid ? Eigen::Vector3d((lh.position + rh.position) / 2)
                                             : (lh.valid ? lh.position : rh.position);
  Eigen::Vector3d axis = head.position - hip;
  double elevation = std::atan2(axis.z(), axis.head<2>().norm()) * 180.0 / std::numbers::pi;
  if (elevation < kLyingElevationDeg) return Posture::lying;
  if (hip.z() < kSittingHipRatio * sensors::BodyDimensions::standing_height) return Posture::sitting;
  return Posture::standing;
}

void WindowConfig::validate() const {
  if (window_ns <= 0 || stride_ns <= 0) throw Error(Errc::validation_error, "window and stride must be > 0");
  voice.validate();
}

bool is_night(double tod) {
  tod = std::fmod(tod, 86400.0);
  if (tod < 0) tod += 86400.0;
  return tod >= 22 * 3600.0 || tod < 6 * 3600.0;
}

std::vector<std::string> FeatureWindow::active_devices() const {
  std::vector<std::string> out;
  for (const auto& [name, st] : devices) {
    if (st != "off" && st != "unknown" && st != "idle") out.push_back(name);
  }
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::vector<FeatureWindow> window_features(const std::vector<FrameFeatures>& records, Nanos span_start,
                                           Nanos span_end, const WindowConfig& config) {
  config.validate();
  std::vector<FeatureWindow> out;
  if (span_end <= span_start) return out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].ts < records[i - 1].ts) throw Error(Errc::order_violation, "level 1 records out of order");
  }
  auto at_or_after = [&](Nanos t) {
    return static_cast<std::size_t>(
        std::lower_bound(records.begin(), records.end(), t, [](const FrameFeatures& r, Nanos v) { return r.ts < v; }) -
        records.begin());
  };

  std::optional<double> last_x, last_y;
  std::size_t carried = 0;  // records before this index already folded into last_x/y
  for (Nanos start = span_start; start < span_end; start += config.stride_ns) {
    FeatureWindow w;
    w.start = start;
    w.end = std::min(start + config.window_ns, span_end);
    const std::size_t lo = at_or_after(w.start), hi = at_or_after(w.end);
    const Nanos mid = w.center();
    w.records = static_cast<int>(hi - lo);

    std::vector<double> speeds, energies, xs, ys, temps, hums;
    std::vector<features::TrackPoint> track;
    std::vector<features::ForceSample> force;
    std::array<int, 3> posture_votes{};
    int voiced = 0, occupied = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& r = records[i];
      if (r.occupied.value_or(false) || r.camera_person.value_or(false)) ++occupied;
      if (r.temperature_c) temps.push_back(*r.temperature_c);
      if (r.humidity_rh) hums.push_back(*r.humidity_rh);
      if (!r.kept) continue;
      ++w.kept;
      if (r.track) {
        speeds.push_back(r.track->speed);
        xs.push_back(r.track->x);
        ys.push_back(r.track->y);
        track.push_back(*r.track);
      }
      if (r.floor && (force.empty() || force.back().t != r.floor->t)) force.push_back(*r.floor);
      if (r.posture != Posture::unknown) ++posture_votes[static_cast<std::size_t>(r.posture)];
      if (r.voice_active.value_or(false)) {
        ++voiced;
        if (r.voice_energy >= config.voice.off_threshold) energies.push_back(r.voice_energy);
      }
    }
    w.mean_speed = mean_of(speeds);
    auto best = std::max_element(posture_votes.begin(), posture_votes.end());
    if (*best > 0) w.posture = static_cast<Posture>(best - posture_votes.begin());
    if (w.kept > 0) w.voice_fraction = static_cast<double>(voiced) / w.kept;
    w.voice_mean = mean_of(energies);
    w.voice_std = std_of(energies);
    if (track.size() >= 2) {
      std::sort(force.begin(), force.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
      auto g = features::gait_features(track, force, w.start, w.end, config.gait);
      w.cadence = g.cadence;
      w.cadence_cv = g.cadence_cv;
      w.steps = g.steps;
    }
    if (w.records > 0) w.occupancy_fraction = static_cast<double>(occupied) / w.records;
    if (!temps.empty()) w.temperature_c = mean_of(temps);
    if (!hums.empty()) w.humidity_rh = mean_of(hums);
    if (!xs.empty()) {
      w.mean_x = mean_of(xs);
      w.mean_y = mean_of(ys);
    }

    // Device map: the latest record at or before the midpoint.
    std::size_t m = at_or_after(mid + 1);
    if (m > 0) w.devices = records[m - 1].devices;

    for (; carried < hi; ++carried) {
      const auto& r = records[carried];
      if (r.kept && r.track) {
        last_x = r.track->x;
        last_y = r.track->y;
      }
    }
    w.last_x = last_x;
    w.last_y = last_y;

    w.time_of_day_s = std::fmod(config.start_time_of_day_s + ns_to_seconds(mid - span_start), 86400.0);
    w.night = is_night(w.time_of_day_s);
    out.push_back(std::move(w));
    if (start + config.window_ns >= span_end) break;
  }
  return out;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

json to_json(const FeatureWindow& w) {
  return {{"start", w.start},
          {"end", w.end},
          {"records", w.records},
          {"kept", w.kept},
          {"mean_speed", w.mean_speed},
          {"posture", posture_name(w.posture)},
          {"voice_fraction", w.voice_fraction},
          {"voice_mean", w.voice_mean},
          {"voice_std", w.voice_std},
          {"cadence", w.cadence},
          {"cadence_cv", w.cadence_cv},
          {"steps", w.steps},
          {"devices", w.devices},
          {"appliances", w.active_devices()},
          {"temperature_c", opt(w.temperature_c)},
          {"humidity_rh", opt(w.humidity_rh)},
          {"occupancy_fraction", w.occupancy_fraction},
          {"time_of_day_s", w.time_of_day_s},
          {"night", w.night},
          {"mean_x", opt(w.mean_x)},
          {"mean_y", opt(w.mean_y)},
          {"last_x", opt(w.last_x)},
          {"last_y", opt(w.last_y)}};
}

FeatureWindow window_from_json(const json& j) {
  try {
    FeatureWindow w;
    w.start = j.at("start").get<Nanos>();
    w.end = j.at("end").get<Nanos>();
    w.records = j.at("records").get<int>();
    w.kept = j.at("kept").get<int>();
    w.mean_speed = j.at("mean_speed").get<double>();
    w.posture = parse_posture(j.at("posture").get<std::string>());
    w.voice_fraction = j.at("voice_fraction").get<double>();
    w.voice_mean = j.at("voice_mean").get<double>();
    w.voice_std = j.at("voice_std").get<double>();
    w.cadence = j.at("cadence").get<double>();
    w.cadence_cv = j.at("cadence_cv").get<double>();
    w.steps = j.at("steps").get<int>();
    w.devices = j.at("devices").get<std::map<std::string, std::string>>();
    w.temperature_c = opt_from(j.at("temperature_c"));
    w.humidity_rh = opt_from(j.at("humidity_rh"));
    w.occupancy_fraction = j.at("occupancy_fraction").get<double>();
    w.time_of_day_s = j.at("time_of_day_s").get<double>();
    w.night = j.at("night").get<bool>();
    w.mean_x = opt_from(j.at("mean_x"));
    w.mean_y = opt_from(j.at("mean_y"));
    w.last_x = opt_from(j.at("last_x"));
    w.last_y = opt_from(j.at("last_y"));
    return w;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("feature window: ") + e.what());
  }
}

predicate::Schema window_schema(const std::vector<std::string>& devices) {
  using predicate::Type;
  predicate::Schema s;
  for (const char* f : {"mean_speed", "voice_fraction", "voice_mean", "voice_std", "cadence", "cadence_cv", "steps",
                        "occupancy_fraction", "time_of_day", "mean_x", "mean_y", "last_x", "last_y", "temperature",
                        "humidity"}) {
    s.fields[f] = Type::number;
  }
  s.fields["posture"] = Type::string;
  s.fields["night"] = Type::boolean;
  s.devices = devices;
  return s;
}

namespace {

void only_keys(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::parse_error, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw Error(Errc::unknown_field, where + " has unknown key '" + k + "'");
    }
  }
}

RuleTable parse_table(const json& j, const std::string& name, const predicate::Schema& schema) {
  only_keys(j, {"taxonomy", "fallback", "rules"}, name);
  RuleTable t;
  try {
    const auto& tax = j.at("taxonomy");
    only_keys(tax, {"name", "version", "labels"}, name + ".taxonomy");
    t.taxonomy.name = tax.at("name").get<std::string>();
    t.taxonomy.version = tax.at("version").get<int>();
    t.taxonomy.labels = tax.at("labels").get<std::vector<std::string>>();
    t.fallback = j.at("fallback").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, name + ": " + e.what());
  }
  t.taxonomy.validate();
  if (!t.taxonomy.contains(t.fallback)) {
    throw Error(Errc::validation_error, name + " fallback '" + t.fallback + "' is not in the taxonomy");
  }
  std::set<std::string> ids;
  for (const auto& r : j.at("rules")) {
    only_keys(r, {"id", "label", "when"}, name + " rule");
    Rule rule{};
    std::string when;
    try {
      rule.id = r.at("id").get<std::string>();
      rule.label = r.at("label").get<std::string>();
      when = r.at("when").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, name + " rule: " + e.what());
    }
    if (!ids.insert(rule.id).second) throw Error(Errc::duplicate_rule_id, name + " rule id '" + rule.id + "' repeats");
    if (!t.taxonomy.contains(rule.label)) {
      throw Error(Errc::validation_error, "rule '" + rule.id + "' label '" + rule.label + "' is not in the taxonomy");
    }
    try {
      rule.when = predicate::Predicate::compile(when, schema);
    } catch (const Error& e) {
      throw Error(e.code(), "rule '" + rule.id + "': " + e.what());
    }
    t.rules.push_back(std::move(rule));
  }
  return t;
}

}  // namespace

RuleSet parse_rules(std::string_view text, const std::vector<std::string>& devices) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("rules: ") + e.what());
  }
  only_keys(doc, {"schema", "activity", "emotion"}, "rules");
  RuleSet rs;
  rs.schema = doc.value("schema", "");
  if (rs.schema != kRulesSchema) throw Error(Errc::parse_error, "rules schema must be " + std::string(kRulesSchema));
  auto schema = window_schema(devices);
  if (!doc.contains("activity") || !doc.contains("emotion")) {
    throw Error(Errc::parse_error, "rules need activity and emotion tables");
  }
  rs.activity = parse_table(doc["activity"], "activity", schema);
  rs.emotion = parse_table(doc["emotion"], "emotion", schema);
  rs.hash = sensors::fnv1a64(text);
  return rs;
}

RuleSet load_rules(const std::filesystem::path& path, const std::vector<std::string>& devices) {
  return parse_rules(read_text_file(path), devices);
}

std::optional<predicate::Value> WindowContext::field(std::string_view name) const {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  auto num = [&](const std::optional<double>& v) -> predicate::Value { return v.value_or(nan); };
  if (name == "mean_speed") return w_.mean_speed;
  if (name == "posture") return std::string(posture_name(w_.posture));
  if (name == "voice_fraction") return w_.voice_fraction;
  if (name == "voice_mean") return w_.voice_mean;
  if (name == "voice_std") return w_.voice_std;
  if (name == "cadence") return w_.cadence;
  if (name == "cadence_cv") return w_.cadence_cv;
  if (name == "steps") return static_cast<double>(w_.steps);
  if (name == "occupancy_fraction") return w_.occupancy_fraction;
  if (name == "time_of_day") return w_.time_of_day_s;
  if (name == "night") return w_.night;
  if (name == "mean_x") return num(w_.mean_x);
  if (name == "mean_y") return num(w_.mean_y);
  if (name == "last_x") return num(w_.last_x);
  if (name == "last_y") return num(w_.last_y);
  if (name == "temperature") return num(w_.temperature_c);
  if (name == "humidity") return num(w_.humidity_rh);
  return std::nullopt;
}

std::optional<std::string> WindowContext::device(std::string_view name) const {
  auto it = w_.devices.find(std::string(name));
  if (it == w_.devices.end()) return std::nullopt;
  return it->second;
}

double confidence_from_slack(const std::optional<double>& slack) {
  if (!slack) return 1.0;
  return 0.5 + 0.5 * std::min(1.0, *slack);
}

Label classify(const FeatureWindow& w, const RuleTable& table) {
  WindowContext ctx(w);
  for (const auto& r : table.rules) {
    auto o = r.when.evaluate(ctx);
    if (o.value) return {w.start, w.end, r.label, confidence_from_slack(o.slack), r.id};
  }
  return {w.start, w.end, table.fallback, 0.5, "fallback"};
}

namespace {

json label_json(const Label& l) {
  return {{"label", l.label}, {"confidence", l.confidence}, {"rule_id", l.rule_id}};
}

Label label_from(const json& j, Nanos start, Nanos end) {
  return {start, end, j.at("label").get<std::string>(), j.at("confidence").get<double>(),
          j.at("rule_id").get<std::string>()};
}

}  // namespace

json to_json(const WindowLabels& l) {
  return {{"start", l.activity.start},
          {"end", l.activity.end},
          {"activity", label_json(l.activity)},
          {"emotion", label_json(l.emotion)}};
}

WindowLabels labels_from_json(const json& j) {
  try {
    Nanos s = j.at("start").get<Nanos>(), e = j.at("end").get<Nanos>();
    return {label_from(j.at("activity"), s, e), label_from(j.at("emotion"), s, e)};
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("labels: ") + e.what());
  }
}

std::vector<std::string> smooth_labels(const std::vector<std::string>& labels, int min_dwell) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    const bool short_run = static_cast<int>(j - i) < min_dwell;
    const std::string& use = (short_run && !out.empty()) ? out.back() : labels[i];
    for (std::size_t k = i; k < j; ++k) out.push_back(use);
    i = j;
  }
  return out;
}

void smooth(std::vector<Label>& labels, int min_dwell) {
  std::vector<std::string> names;
  names.reserve(labels.size());
  for (const auto& l : labels) names.push_back(l.label);
  auto smoothed = smooth_labels(names, min_dwell);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (smoothed[i] == labels[i].label) continue;
    labels[i].label = smoothed[i];
    labels[i].confidence = 0.5;
    labels[i].rule_id = "smoothed";
  }
}

std::optional<std::size_t> nearest_window(const std::vector<Nanos>& centers, Nanos t) {
  if (centers.empty()) return std::nullopt;
  auto it = std::lower_bound(centers.begin(), centers.end(), t);
  if (it == centers.begin()) return 0;
  if (it == centers.end()) return centers.size() - 1;
  auto hi = static_cast<std::size_t>(it - centers.begin());
  return (t - centers[hi - 1] <= centers[hi] - t) ? hi - 1 : hi;
}

}  // namespace shf::state
