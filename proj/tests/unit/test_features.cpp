#include <cmath>
#include <numbers>
#include <random>

#include "shf/features.hpp"
#include "shf/sensors.hpp"
#include "support.hpp"

using namespace shf;
using namespace shf::features;

namespace {

std::vector<const sensors::SensorSpec*> cameras(const sensors::Scenario& s) {
  std::vector<const sensors::SensorSpec*> out;
  for (const auto& x : s.sensors) {
    if (x.modality == Modality::camera) out.push_back(&x);
  }
  return out;
}

// Dense grid search over a cube around `center`; the smallest cost found.
double grid_min_cost(std::span<const Ray> rays, const Eigen::Vector3d& center, double half, double step) {
  double best = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(std::lround(half / step));
  for (int i = -n; i <= n; ++i) {
    for (int j = -n; j <= n; ++j) {
      for (int k = -n; k <= n; ++k) {
        Eigen::Vector3d p = center + step * Eigen::Vector3d(i, j, k);
        best = std::min(best, ray_cost(rays, p));
      }
    }
  }
  return best;
}

std::vector<CameraView> views_of(const sensors::Scenario& s, const sensors::Skeleton& skel, double sigma,
                                 std::uint64_t key) {
  std::vector<CameraView> out;
  for (const auto* cam : cameras(s)) {
    auto p = sensors::project_keypoints(*cam, skel, {sigma, key + cam->device_id});
    out.push_back({*cam->pose, *cam->intrinsics, p});
  }
  return out;
}

}  // namespace

TEST_CASE("occupancy examples") {
  sensors::FloorGrid grid;
  grid.cols = 20;
  grid.rows = 20;
  grid.origin_x = -0.125;
  grid.origin_y = -0.125;
  FloorFrame f{20, 20, std::vector<float>(400, 0.0f)};
  auto o = detect_occupancy(f, grid);
  CHECK_FALSE(o.occupied);
  CHECK_FALSE(o.centroid);
  CHECK(o.total_force == 0.0);

  f.cells[12 * 20 + 8] = 700.0f;
  o = detect_occupancy(f, grid);
  REQUIRE(o.occupied);
  CHECK((*o.centroid)(0) == doctest::Approx(2.0));
  CHECK((*o.centroid)(1) == doctest::Approx(3.0));
  CHECK_FALSE(detect_occupancy(f, grid, 701.0).occupied);

  FloorFrame wrong{19, 20, std::vector<float>(380, 0.0f)};
  CHECK(test::error_code_of([&] { detect_occupancy(wrong, grid); }) == Errc::dimension_mismatch);
  FloorFrame short_cells{20, 20, std::vector<float>(10, 0.0f)};
  CHECK(test::error_code_of([&] { detect_occupancy(short_cells, grid); }) == Errc::dimension_mismatch);
}

TEST_CASE("raising the force threshold never creates occupancy") {
  std::mt19937_64 g(11);
  sensors::FloorGrid grid;
  grid.cols = 8;
  grid.rows = 6;
  std::uniform_real_distribution<double> u(0, 60);
  for (int trial = 0; trial < 500; ++trial) {
    FloorFrame f{8, 6, {}};
    for (int i = 0; i < 48; ++i) f.cells.push_back(static_cast<float>(u(g) * (i % 3 == 0)));
    double lo = u(g) * 10, hi = lo + u(g) * 10;
    if (!detect_occupancy(f, grid, lo).occupied) CHECK_FALSE(detect_occupancy(f, grid, hi).occupied);
  }
}

TEST_CASE("simulated floor blob centroid is within a cell pitch") {
  auto s = sensors::load_scenario(test::data_dir() / "scenario_cleaning_noiseless.shs");
  s.residents.resize(1);
  s.residents[0].waypoints = {{0, 4.2, 1.7}, {s.duration_s, 4.2, 1.7}};
  s.residents[0].away_intervals.clear();
  s.residents[0].activity_timeline = {{0, s.duration_s, "standing"}};
  sensors::Simulator sim(s);
  const auto* floor = s.find_sensor(11);
  REQUIRE(floor);
  auto f = std::get<FloorFrame>(sim.observe(*floor, 5 * kNanosPerSecond, 0));
  auto o = detect_occupancy(f, *floor->grid);
  REQUIRE(o.occupied);
  CHECK(std::hypot((*o.centroid)(0) - 4.2, (*o.centroid)(1) - 1.7) < floor->grid->pitch_m);
}

TEST_CASE("voice hysteresis and hangover") {
  VoiceDetector d;
  CHECK_FALSE(d.update(0, {0.0f, 0.0f}).active);
  CHECK_FALSE(d.update(1, {0.15f, 0.0f}).active);  // between thresholds, not yet on
  CHECK(d.update(2, {0.5f, 0.0f}).active);
  CHECK(d.update(3, {0.15f, 0.0f}).active);  // between thresholds, stays on
  const Nanos q = 10 * kNanosPerMilli;
  CHECK(d.update(q, {0.05f, 0.0f}).active);
  CHECK(d.update(q + 200 * kNanosPerMilli, {0.05f, 0.0f}).active);
  CHECK(d.update(q + 250 * kNanosPerMilli, {0.12f, 0.0f}).active);  // resets the quiet run
  CHECK(d.update(q + 300 * kNanosPerMilli, {0.05f, 0.0f}).active);
  CHECK(d.update(q + 599 * kNanosPerMilli, {0.05f, 0.0f}).active);
  CHECK_FALSE(d.update(q + 600 * kNanosPerMilli, {0.05f, 0.0f}).active);
  CHECK_FALSE(d.update(q + 700 * kNanosPerMilli, {0.15f, 0.0f}).active);

  VoiceConfig bad;
  bad.off_threshold = 0.3;
  CHECK(test::error_code_of([&] { VoiceDetector x(bad); }) == Errc::validation_error);
}

TEST_CASE("voice detection agrees with scripted speech") {
  auto s = sensors::load_scenario(test::data_dir() / "scenario_daily.shs");
  sensors::Simulator sim(s);
  const sensors::SensorSpec* mic = nullptr;
  for (const auto& x : s.sensors) {
    if (x.modality == Modality::microphone) mic = &x;
  }
  REQUIRE(mic);
  auto samples = sim.emit(*mic, 0, s.duration_ns());
  VoiceDetector d;
  std::size_t agree = 0;
  for (const auto& x : samples) {
    bool active = d.update(x.ref_time, std::get<AudioSample>(x.payload)).active;
    bool truth = sensors::truth_at(s, x.ref_time).residents[0].speaking;
    agree += active == truth;
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(samples.size()) >= 0.95);
}

TEST_CASE("triangulation examples") {
  std::vector<Ray> rays{{{0, 0, 0}, {1, 0, 0}}, {{1, 1, 0}, {0, -1, 0}}};
  auto t = triangulate(rays);
  CHECK((t.point - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
  CHECK(t.residual == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<Ray> parallel{{{0, 0, 0}, {1, 0, 0}}, {{0, 1, 0}, {1, 0, 0}}};
  CHECK(test::error_code_of([&] { triangulate(parallel); }) == Errc::degenerate_geometry);
  std::vector<Ray> opposed{{{0, 0, 0}, {1, 0, 0}}, {{0, 1, 0}, {-1, 0, 0}}};
  CHECK(test::error_code_of([&] { triangulate(opposed); }) == Errc::degenerate_geometry);
  CHECK(test::error_code_of([&] { triangulate(std::span<const Ray>(rays.data(), 1)); }) == Errc::too_few_cameras);
  CHECK(test::error_code_of([&] { triangulate(rays, 3); }) == Errc::too_few_cameras);

  // Skew rays: the answer is the midpoint of the common perpendicular.
  std::vector<Ray> skew{{{0, 0, 0}, {1, 0, 0}}, {{0, 0, 1}, {0, 1, 0}}};
  t = triangulate(skew);
  CHECK((t.point - Eigen::Vector3d(0, 0, 0.5)).norm() < 1e-12);
  CHECK(t.residual == doctest::Approx(0.5));
}

TEST_CASE("noiseless project and triangulate round trip") {
  auto s = sensors::load_scenario(test::data_dir() / "scenario_daily.shs");
  auto cams = cameras(s);
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> ux(1.0, 8.0), uy(1.0, 5.0), uz(0.05, 1.9);
  double worst = 0;
  int joints = 0;
  while (joints < 1000) {
    Eigen::Vector3d p(ux(g), uy(g), uz(g));
    std::vector<View> views;
    for (const auto* c : cams) {
      auto uv = project(*c->pose, *c->intrinsics, p);
      if (uv && in_frame(*uv)) views.push_back({*c->pose, *c->intrinsics, *uv});
    }
    if (views.size() < 2) continue;
    worst = std::max(worst, (triangulate(views).point - p).norm());
    ++joints;
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("least squares beats a dense grid under keypoint noise") {
  auto s = sensors::load_scenario(test::data_dir() / "scenario_daily.shs");
  auto cams = cameras(s);
  std::mt19937_64 g(5);
  std::normal_distribution<double> noise(0.0, 0.002);
  std::uniform_real_distribution<double> ux(1.5, 7.5), uy(1.0, 5.0), uz(0.1, 1.8);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::Vector3d p(ux(g), uy(g), uz(g));
    std::vector<Ray> rays;
    for (const auto* c : cams) {
      auto uv = project(*c->pose, *c->intrinsics, p);
      if (!uv || !in_frame(*uv)) continue;
      Eigen::Vector2d noisy = *uv + Eigen::Vector2d(noise(g), noise(g));
      rays.push_back(back_project(*c->pose, *c->intrinsics, noisy));
    }
    REQUIRE(rays.size() >= 2);
    auto t = triangulate(rays);
    double grid = grid_min_cost(rays, p, 0.1, 0.01);
    CHECK(ray_cost(rays, t.point) <= grid + 1e-15);
    CHECK((t.point - p).norm() < 0.05);
  }
}

TEST_CASE("skeleton reconstruction") {
  auto s = sensors::load_scenario(test::data_dir() / "scenario_daily.shs");
  for (Posture posture : {Posture::standing, Posture::sitting, Posture::lying}) {
    auto skel = sensors::synthesize_skeleton(4.5, 3.0, 0.7, posture);
    auto views = views_of(s, skel, 0.0, 1);
    auto rec = reconstruct_skeleton(views);
    CHECK(rec.valid_count() == kJointCount);
    for (int j = 0; j < kJointCount; ++j) {
      CHECK((rec.joints[static_cast<std::size_t>(j)].position - skel[static_cast<std::size_t>(j)]).norm() < 1e-6);
    }
    REQUIRE(rec.root);
    Eigen::Vector3d hips = (skel[7] + skel[8]) / 2;
    CHECK(((*rec.root) - hips.head<2>()).norm() < 1e-6);
  }

  // Legs seen by one camera only: leg joints invalid, upper body valid.
  auto skel = sensors::synthesize_skeleton(4.5, 3.0, 0.0, Posture::standing);
  auto views = views_of(s, skel, 0.0, 1);
  for (std::size_t v = 1; v < views.size(); ++v) {
    for (Joint j : {Joint::left_knee, Joint::right_knee, Joint::left_ankle, Joint::right_ankle}) {
      views[v].person.keypoints[static_cast<std::size_t>(j)].in_view = false;
    }
  }
  auto rec = reconstruct_skeleton(views);
  CHECK(rec.valid_count() == kJointCount - 4);
  CHECK_FALSE(rec.joint(Joint::left_ankle).valid);
  CHECK(rec.joint(Joint::left_ankle).cameras == 1);
  CHECK(rec.joint(Joint::head).valid);

  // Low confidence keypoints do not participate.
  views = views_of(s, skel, 0.0, 1);
  for (auto& v : views) v.person.keypoints[0].confidence = 0.29f;
  CHECK_FALSE(reconstruct_skeleton(views).joint(Joint::head).valid);

  // No hips: root falls back to the centroid of valid joints.
  views = views_of(s, skel, 0.0, 1);
  for (auto& v : views) {
    v.person.keypoints[static_cast<std::size_t>(Joint::left_hip)].in_view = false;
    v.person.keypoints[static_cast<std::size_t>(Joint::right_hip)].in_view = false;
  }
  rec = reconstruct_skeleton(views);
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& j : rec.joints) {
    if (j.valid) sum += j.position;
  }
  CHECK(((*rec.root) - (sum / rec.valid_count()).head<2>()).norm() < 1e-9);

  views.resize(1);
  CHECK(test::error_code_of([&] { reconstruct_skeleton(views); }) == Errc::no_camera_pair);
}

TEST_CASE("consistency filter") {
  Evidence empty{false, false, false};
  auto d = filter_record(empty);
  CHECK_FALSE(d.kept);
  CHECK(d.reason == "unoccupied");
  CHECK(filter_record(empty, true).kept);
  CHECK(filter_record({true, false, false}).kept);
  CHECK(filter_record({false, true, false}).kept);
  CHECK(filter_record({false, false, true}).kept);
  CHECK(filter_record({std::nullopt, std::nullopt, false}).kept == false);
  CHECK(filter_record({}).kept);  // no evidence at all
  CHECK(filter_record({false, true, false}).voice_vision_disagreement);
  CHECK_FALSE(filter_record({true, true, false}).voice_vision_disagreement);

  std::mt19937_64 g(1);
  std::vector<Evidence> ev;
  auto pick = [&]() -> std::optional<bool> {
    int k = static_cast<int>(g() % 3);
    return k == 2 ? std::nullopt : std::optional<bool>(k == 1);
  };
  for (int i = 0; i < 1000; ++i) ev.push_back({pick(), pick(), pick()});
  auto r = consistency_filter(ev);
  CHECK(r.kept.size() + r.dropped.size() == ev.size());
  CHECK(r.reasons.size() == r.dropped.size());
  std::vector<int> seen(ev.size(), 0);
  for (auto i : r.kept) ++seen[i];
  for (auto i : r.dropped) ++seen[i];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("tracker fusion and smoothing") {
  Tracker t;
  auto p = t.update(0, Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1));
  CHECK(p.x == 1.0);
  CHECK(p.y == 1.0);
  CHECK(p.speed == 0.0);

  Tracker u;
  u.update(0, Eigen::Vector2d(0, 0), std::nullopt);
  p = u.update(kNanosPerSecond, Eigen::Vector2d(1, 0), Eigen::Vector2d(2, 0));
  // measurement = (0.7 * 1 + 0.3 * 2) / 1.0 = 1.3; smoothed = 0.6 * 1.3
  CHECK(p.x == doctest::Approx(0.78));
  CHECK(p.speed == doctest::Approx(0.78));
  p = u.update(2 * kNanosPerSecond, std::nullopt, Eigen::Vector2d(2, 0));
  CHECK(p.x == doctest::Approx(0.6 * 2 + 0.4 * 0.78));

  // Stationary sources: speed decays monotonically.
  double prev = p.speed;
  for (int k = 3; k < 30; ++k) {
    auto q = u.update(k * kNanosPerSecond, Eigen::Vector2d(2, 0), Eigen::Vector2d(2, 0));
    CHECK(q.speed <= prev);
    prev = q.speed;
  }
  CHECK(prev < 1e-9);

  CHECK(test::error_code_of([&] { u.update(100 * kNanosPerSecond, std::nullopt, std::nullopt); }) == Errc::no_source);
  CHECK(test::error_code_of([&] { u.update(kNanosPerSecond, Eigen::Vector2d(0, 0), std::nullopt); }) ==
        Errc::order_violation);
}

TEST_CASE("tracked speed of a noisy straight walk") {
  std::mt19937_64 g(9);
  std::normal_distribution<double> cam(0.0, 0.01), flo(0.0, 0.03);
  Tracker t;
  double sum = 0;
  int n = 0;
  for (int k = 0; k < 300; ++k) {
    Nanos ts = k * kNanosPerSecond / 30;
    double x = 1.0 + 1.2 * ns_to_seconds(ts);
    auto p = t.update(ts, Eigen::Vector2d(x + cam(g), 2 + cam(g)), Eigen::Vector2d(x + flo(g), 2 + flo(g)));
    if (k >= 15) {
      sum += p.speed;
      ++n;
    }
  }
  CHECK(std::abs(sum / n - 1.2) < 0.1);
}

TEST_CASE("step detection and cadence") {
  std::vector<TrackPoint> track{{0, 0, 0, 0.5}, {5 * kNanosPerSecond - 1, 0, 0, 0.5}};
  std::vector<ForceSample> flat;
  for (int k = 0; k < 500; ++k) flat.push_back({k * 10 * kNanosPerMilli, 700.0});
  auto gf = gait_features(track, flat, 0, 5 * kNanosPerSecond);
  CHECK(gf.cadence == 0.0);
  CHECK(gf.steps == 0);
  CHECK(gf.mean_speed == doctest::Approx(0.5));

  // 0.5 s period sampled at 100 Hz; peaks at t = 0.5 k for k >= 1.
  std::vector<ForceSample> sine;
  for (int k = 0; k < 500; ++k) {
    double t = k * 0.01;
    sine.push_back({k * 10 * kNanosPerMilli, 700.0 * (1 + 0.3 * std::cos(2 * std::numbers::pi * t / 0.5))});
  }
  gf = gait_features(track, sine, 0, 5 * kNanosPerSecond);
  CHECK(gf.steps == 9);
  CHECK(gf.cadence == doctest::Approx(120.0));
  CHECK(gf.cadence_cv == doctest::Approx(0.0).epsilon(1e-9));

  // Two nearby maxima: the larger survives.
  std::vector<ForceSample> close{{0, 700}, {10, 900}, {20, 700}, {100 * kNanosPerMilli, 700},
                                 {110 * kNanosPerMilli, 950}, {120 * kNanosPerMilli, 700}, {130 * kNanosPerMilli, 700}};
  auto steps = detect_steps(close);
  REQUIRE(steps.size() == 1);
  CHECK(steps[0] == 110 * kNanosPerMilli);

  // Peaks under the absolute force floor never count.
  std::vector<ForceSample> light;
  for (int k = 0; k < 100; ++k) light.push_back({k * 10 * kNanosPerMilli, k % 10 == 5 ? 150.0 : 20.0});
  CHECK(detect_steps(light).empty());

  CHECK(test::error_code_of([&] { gait_features(std::span<const TrackPoint>(track.data(), 1), sine, 0, kNanosPerSecond); }) ==
        Errc::window_too_short);
}

TEST_CASE("scripted cadence is recovered from the floor") {
  auto s = sensors::load_scenario(test::data_dir() / "scenario_daily.shs");
  sensors::Simulator sim(s);
  const auto* floor = s.find_sensor(11);
  REQUIRE(floor);
  // Cleaning sweep: neutral mood, scripted cadence 100.
  const Nanos start = 436 * kNanosPerSecond, end = 446 * kNanosPerSecond;
  std::vector<ForceSample> force;
  for (const auto& x : sim.emit(*floor, start, end)) {
    force.push_back({x.ref_time, std::get<FloorFrame>(x.payload).total()});
  }
  std::vector<TrackPoint> track{{start, 0, 0, 0.4}, {end - 1, 0, 0, 0.4}};
  auto gf = gait_features(track, force, start, end);
  CHECK(gf.cadence == doctest::Approx(100.0).epsilon(0.10));
}
