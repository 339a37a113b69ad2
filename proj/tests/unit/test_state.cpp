#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "shf/sensors.hpp"
#include "shf/state.hpp"
#include "support.hpp"

using namespace shf;
using namespace shf::state;
using nlohmann::json;

namespace {

const std::vector<std::string> kDevices{"stove", "kettle", "tv", "lamp", "vacuum", "fan", "night_light", "speaker"};

RuleSet default_rules() { return load_rules(test::data_dir() / "level2.rules", kDevices); }

features::Skeleton3D exact(const sensors::Skeleton& s) {
  features::Skeleton3D out;
  for (std::size_t j = 0; j < s.size(); ++j) out.joints[j] = {s[j], 0.0, true, 2};
  return out;
}

// The shipped activity table written out by hand.
std::string oracle_activity(const FeatureWindow& w) {
  auto dev = [&](const char* n) {
    auto it = w.devices.find(n);
    return it == w.devices.end() ? std::string("unknown") : it->second;
  };
  const auto p = w.posture;
  const double lx = w.last_x.value_or(NAN), ly = w.last_y.value_or(NAN);
  const double mx = w.mean_x.value_or(NAN), my = w.mean_y.value_or(NAN);
  if (w.night && p == Posture::lying) return "sleeping";
  if (w.night && w.occupancy_fraction < 0.2 && lx >= 8.2 && ly <= 2.6) return "sleeping";
  if (dev("vacuum") == "on") return "cleaning";
  if (w.mean_speed >= 0.45) return "walking";
  if (w.cadence >= 125 && w.mean_speed < 0.45) return "exercising";
  if (dev("stove") == "on" && p == Posture::standing) return "cooking";
  if (dev("kettle") == "on" && p == Posture::standing) return "drinking";
  if (p == Posture::lying) return "lying";
  if (p == Posture::sitting && dev("tv") == "on") return "watching_tv";
  if (p == Posture::sitting && dev("lamp") == "on") return "reading";
  if (p == Posture::sitting && mx >= 3.5 && mx <= 5.5 && my <= 2.2) return "eating";
  if (p == Posture::sitting) return "sitting";
  if (p == Posture::standing) return "standing";
  return "idle";
}

std::string oracle_emotion(const FeatureWindow& w) {
  const double vf = w.voice_fraction, m = w.voice_mean, sd = w.voice_std;
  if (vf >= 0.3 && m >= 0.75) return "angry";
  if (vf >= 0.2 && m >= 0.6 && sd >= 0.15) return "excited";
  if (vf >= 0.2 && sd >= 0.15 && m < 0.62) return "surprised";
  if (vf >= 0.2 && m >= 0.52 && m < 0.75 && sd < 0.15) return "happy";
  if (vf >= 0.2 && m < 0.33) return "sad";
  if (w.steps >= 4 && w.cadence > 0 && w.cadence < 85) return "tired";
  if (w.steps >= 4 && w.cadence_cv >= 0.12) return "fearful";
  if (vf >= 0.2 && m >= 0.38 && m <= 0.44 && sd < 0.08) return "disgusted";
  return "neutral";
}

FeatureWindow random_window(std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0, 1);
  FeatureWindow w;
  w.start = 0;
  w.end = 5 * kNanosPerSecond;
  w.mean_speed = u(g) * 1.5;
  w.posture = static_cast<Posture>(g() % 4);
  w.voice_fraction = u(g);
  w.voice_mean = u(g);
  w.voice_std = u(g) * 0.3;
  w.cadence = u(g) < 0.3 ? 0.0 : u(g) * 180;
  w.cadence_cv = u(g) * 0.3;
  w.steps = static_cast<int>(g() % 12);
  w.occupancy_fraction = u(g);
  w.night = u(g) < 0.5;
  w.time_of_day_s = u(g) * 86400;
  if (u(g) < 0.8) {
    w.mean_x = u(g) * 10;
    w.mean_y = u(g) * 6;
    w.last_x = u(g) * 10;
    w.last_y = u(g) * 6;
  }
  if (u(g) < 0.8) w.temperature_c = 18 + u(g) * 12;
  for (const auto& d : kDevices) {
    if (u(g) < 0.8) w.devices[d] = u(g) < 0.3 ? "on" : "off";
  }
  return w;
}

FrameFeatures frame(Nanos ts) {
  FrameFeatures f;
  f.ts = ts;
  f.occupied = true;
  f.camera_person = true;
  f.voice_active = true;
  f.voice_energy = 0.4;
  f.posture = Posture::sitting;
  f.track = features::TrackPoint{ts, 2.0, 3.0, 0.25};
  f.temperature_c = 22.0;
  f.humidity_rh = 40.0;
  f.devices = {{"tv", "on"}, {"lamp", "off"}};
  return f;
}

}  // namespace

TEST_CASE("posture templates round trip") {
  for (Posture p : {Posture::standing, Posture::sitting, Posture::lying}) {
    for (double heading : {0.0, 1.0, 2.5, -2.0}) {
      CHECK(posture_code(exact(sensors::synthesize_skeleton(3.0, 2.0, heading, p))) == p);
    }
  }
}

TEST_CASE("posture thresholds") {
  auto s = exact(sensors::synthesize_skeleton(3.0, 2.0, 0.0, Posture::standing));
  // Tilt the body axis to 10 degrees above horizontal, hips raised to standing height.
  Eigen::Vector3d hip = (s.joints[7].position + s.joints[8].position) / 2;
  const double len = 0.7, e = 10.0 * std::numbers::pi / 180.0;
  s.joints[0].position = hip + Eigen::Vector3d(len * std::cos(e), 0, len * std::sin(e));
  CHECK(posture_code(s) == Posture::lying);

  auto few = exact(sensors::synthesize_skeleton(3.0, 2.0, 0.0, Posture::standing));
  for (std::size_t j = 6; j < few.joints.size(); ++j) few.joints[j].valid = j == 7 || j == 8;
  CHECK(few.valid_count() == 8);
  CHECK(posture_code(few) == Posture::standing);
  for (std::size_t j = 1; j < 6; ++j) few.joints[j].valid = j < 4;
  CHECK(few.valid_count() == 6);
  CHECK(posture_code(few) == Posture::standing);
  few.joints[3].valid = false;
  CHECK(posture_code(few) == Posture::unknown);

  auto headless = exact(sensors::synthesize_skeleton(3.0, 2.0, 0.0, Posture::sitting));
  headless.joints[0].valid = false;
  CHECK(posture_code(headless) == Posture::unknown);
}

TEST_CASE("window features aggregate constants") {
  std::vector<FrameFeatures> recs;
  for (int k = 0; k < 300; ++k) recs.push_back(frame(k * kNanosPerSecond / 30));
  WindowConfig cfg;
  cfg.start_time_of_day_s = 23 * 3600.0;
  auto ws = window_features(recs, 0, 10 * kNanosPerSecond, cfg);
  REQUIRE(ws.size() == 3);
  CHECK(ws[0].start == 0);
  CHECK(ws[1].start == 2500 * kNanosPerMilli);
  CHECK(ws[2].end == 10 * kNanosPerSecond);
  for (const auto& w : ws) {
    CHECK(w.records == 150);
    CHECK(w.mean_speed == doctest::Approx(0.25));
    CHECK(w.posture == Posture::sitting);
    CHECK(w.voice_fraction == 1.0);
    CHECK(w.voice_mean == doctest::Approx(0.4));
    CHECK(w.voice_std == doctest::Approx(0.0));
    CHECK(*w.temperature_c == doctest::Approx(22.0));
    CHECK(*w.mean_x == doctest::Approx(2.0));
    CHECK(w.occupancy_fraction == 1.0);
    CHECK(w.devices.at("tv") == "on");
    CHECK(w.active_devices() == std::vector<std::string>{"tv"});
    CHECK(w.night);
    CHECK(w.cadence == 0.0);
  }
  CHECK(ws[0].time_of_day_s == doctest::Approx(23 * 3600.0 + 2.5));
  CHECK(window_features(recs, 0, 0, cfg).empty());
  CHECK(window_features({}, 0, 0, cfg).empty());
}

TEST_CASE("windows without records and dropped records") {
  std::vector<FrameFeatures> recs;
  for (int k = 0; k < 150; ++k) {
    auto f = frame(k * kNanosPerSecond / 30);
    if (k >= 75) {
      f.kept = false;
      f.occupied = false;
      f.camera_person = false;
    }
    recs.push_back(f);
  }
  auto ws = window_features(recs, 0, 12500 * kNanosPerMilli, {});
  REQUIRE(ws.size() == 4);
  CHECK(ws[0].kept == 75);
  CHECK(ws[0].occupancy_fraction == doctest::Approx(0.5));
  CHECK(ws[1].kept == 0);
  CHECK(ws[1].posture == Posture::unknown);
  CHECK(ws[3].records == 0);
  CHECK(ws[3].occupancy_fraction == 0.0);
  CHECK(ws[3].posture == Posture::unknown);
  // Last known position is carried forward.
  REQUIRE(ws[3].last_x);
  CHECK(*ws[3].last_x == doctest::Approx(2.0));
  CHECK_FALSE(ws[3].mean_x);
  CHECK(ws[3].devices.at("tv") == "on");

  std::swap(recs[3], recs[4]);
  CHECK(test::error_code_of([&] { window_features(recs, 0, kNanosPerSecond, {}); }) == Errc::order_violation);
}

TEST_CASE("window json round trip") {
  std::mt19937_64 g(2);
  for (int i = 0; i < 200; ++i) {
    auto w = random_window(g);
    auto back = window_from_json(to_json(w));
    CHECK(to_json(back) == to_json(w));
  }
}

TEST_CASE("default tables load and cover the taxonomies") {
  auto rs = default_rules();
  CHECK(rs.activity.taxonomy.labels.size() == 13);
  CHECK(rs.emotion.taxonomy.labels.size() == 9);
  CHECK(rs.activity.taxonomy.labels == default_activity_taxonomy().labels);
  CHECK(rs.emotion.taxonomy.labels == default_emotion_taxonomy().labels);
  for (const auto* t : {&rs.activity, &rs.emotion}) {
    std::set<std::string> covered{t->fallback};
    for (const auto& r : t->rules) covered.insert(r.label);
    CHECK(covered.size() == t->taxonomy.labels.size());
  }
}

TEST_CASE("classification matches the hand-written table") {
  auto rs = default_rules();
  std::mt19937_64 g(42);
  for (int i = 0; i < 20000; ++i) {
    auto w = random_window(g);
    auto a = classify(w, rs.activity);
    auto e = classify(w, rs.emotion);
    CHECK(a.label == oracle_activity(w));
    CHECK(e.label == oracle_emotion(w));
    CHECK(rs.activity.taxonomy.contains(a.label));
    CHECK(a.confidence >= 0.0);
    CHECK(a.confidence <= 1.0);
    CHECK(e.confidence >= 0.5);
  }
}

TEST_CASE("classification examples") {
  auto rs = default_rules();
  FeatureWindow w;
  w.posture = Posture::lying;
  w.night = true;
  CHECK(classify(w, rs.activity).label == "sleeping");
  CHECK(classify(w, rs.activity).confidence == 1.0);

  FeatureWindow walk;
  walk.mean_speed = 1.2;
  walk.posture = Posture::standing;
  auto l = classify(walk, rs.activity);
  CHECK(l.label == "walking");
  CHECK(l.rule_id == "walking");
  CHECK(l.confidence == doctest::Approx(0.5 + 0.5 * std::min(1.0, (1.2 - 0.45) / 0.45)));

  FeatureWindow calm;
  calm.mean_speed = 0.1;
  calm.cadence_cv = 0.02;
  calm.voice_mean = 0.05;
  auto n = classify(calm, rs.emotion);
  CHECK(n.label == "neutral");
  CHECK(n.confidence == 0.5);
  CHECK(n.rule_id == "fallback");

  FeatureWindow lively;
  lively.cadence = 140;
  lively.steps = 10;
  lively.voice_fraction = 0.6;
  lively.voice_mean = 0.68;
  lively.voice_std = 0.2;
  CHECK(classify(lively, rs.emotion).label == "excited");
}

TEST_CASE("rules below the match do not matter") {
  auto rs = default_rules();
  std::mt19937_64 g(8);
  for (int i = 0; i < 500; ++i) {
    auto w = random_window(g);
    auto base = classify(w, rs.activity);
    auto table = rs.activity;
    auto hit = std::find_if(table.rules.begin(), table.rules.end(), [&](const Rule& r) { return r.id == base.rule_id; });
    if (hit == table.rules.end()) continue;
    std::shuffle(hit + 1, table.rules.end(), g);
    CHECK(classify(w, table).label == base.label);
  }
}

TEST_CASE("rule file errors") {
  auto text = read_text_file(test::data_dir() / "level2.rules");
  auto doc = json::parse(text);
  auto with = [&](auto edit) {
    auto d = doc;
    edit(d);
    return test::error_code_of([&] { parse_rules(d.dump(), kDevices); });
  };
  CHECK(with([](json& d) { d["activity"]["rules"][1]["id"] = "sleeping_observed"; }) == Errc::duplicate_rule_id);
  CHECK(with([](json& d) { d["activity"]["rules"][0]["when"] = "device.oven == \"on\""; }) == Errc::unknown_device);
  CHECK(with([](json& d) { d["activity"]["rules"][0]["when"] = "altitude > 2"; }) == Errc::unknown_field);
  CHECK(with([](json& d) { d["activity"]["rules"][0]["label"] = "dancing"; }) == Errc::validation_error);
  CHECK(with([](json& d) { d["activity"]["fallback"] = "dancing"; }) == Errc::validation_error);
  CHECK(with([](json& d) { d["extra"] = 1; }) == Errc::unknown_field);
  CHECK(with([](json& d) { d["schema"] = "shl2/9"; }) == Errc::parse_error);
  CHECK(with([](json& d) { d["emotion"]["taxonomy"]["labels"].push_back("happy"); }) == Errc::validation_error);
  CHECK(test::error_code_of([] { parse_rules("{", kDevices); }) == Errc::parse_error);
  CHECK(test::error_code_of([] { load_rules("/nonexistent/level2.rules", kDevices); }) == Errc::missing_input);
}

TEST_CASE("smoothing examples") {
  using V = std::vector<std::string>;
  CHECK(smooth_labels(V{"A", "A", "A"}) == V{"A", "A", "A"});
  CHECK(smooth_labels(V{"A", "B", "A"}) == V{"A", "A", "A"});
  CHECK(smooth_labels(V{"B", "A", "A"}) == V{"B", "A", "A"});  // first run exempt
  CHECK(smooth_labels(V{"A", "A", "B", "C", "C"}) == V{"A", "A", "A", "C", "C"});
  CHECK(smooth_labels(V{"A", "A", "B", "B", "C"}, 3) == V{"A", "A", "A", "A", "A"});
  CHECK(smooth_labels(V{}).empty());
}

TEST_CASE("smoothing is idempotent and adds no labels") {
  std::mt19937_64 g(77);
  for (int i = 0; i < 10000; ++i) {
    std::size_t n = g() % 40;
    int alphabet = 1 + static_cast<int>(g() % 4);
    int dwell = 1 + static_cast<int>(g() % 4);
    std::vector<std::string> x;
    for (std::size_t k = 0; k < n; ++k) x.push_back(std::string(1, static_cast<char>('a' + g() % alphabet)));
    auto once = smooth_labels(x, dwell);
    REQUIRE(once.size() == x.size());
    CHECK(smooth_labels(once, dwell) == once);
    for (const auto& l : once) CHECK(std::find(x.begin(), x.end(), l) != x.end());
  }
}

TEST_CASE("smooth marks replaced labels") {
  std::vector<Label> ls{{0, 1, "A", 0.9, "r1"}, {1, 2, "B", 0.8, "r2"}, {2, 3, "A", 0.7, "r1"}};
  smooth(ls);
  CHECK(ls[1].label == "A");
  CHECK(ls[1].rule_id == "smoothed");
  CHECK(ls[1].confidence == 0.5);
  CHECK(ls[2].rule_id == "r1");
}

TEST_CASE("nearest window lookup") {
  std::vector<Nanos> c{10, 20, 30};
  CHECK(*nearest_window(c, 0) == 0);
  CHECK(*nearest_window(c, 15) == 0);  // tie to the earlier
  CHECK(*nearest_window(c, 16) == 1);
  CHECK(*nearest_window(c, 99) == 2);
  CHECK_FALSE(nearest_window({}, 5));
}

TEST_CASE("night boundaries") {
  CHECK(is_night(22 * 3600.0));
  CHECK(is_night(3 * 3600.0));
  CHECK_FALSE(is_night(6 * 3600.0));
  CHECK_FALSE(is_night(21 * 3600.0 + 3599));
  CHECK(is_night(86400.0 + 23 * 3600.0));
}

TEST_CASE("label json round trip") {
  WindowLabels l{{0, 5, "walking", 0.75, "walking"}, {0, 5, "happy", 0.6, "happy"}};
  auto back = labels_from_json(to_json(l));
  CHECK(back.activity.label == "walking");
  CHECK(back.emotion.confidence == 0.6);
  CHECK(back.activity.end == 5);
}
