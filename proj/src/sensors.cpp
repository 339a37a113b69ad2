#include "shf/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "shf/random.hpp"

namespace shf::sensors {

namespace {

template <typename Iv>
const Iv* find_interval(const std::vector<Iv>& ivs, double t) {
  for (const auto& iv : ivs) {
    if (t >= iv.start && t < iv.end) return &iv;
  }
  return nullptr;
}

double interpolate(const std::vector<ProfilePoint>& p, double t, double fallback) {
  if (p.empty()) return fallback;
  if (t <= p.front().t) return p.front().value;
  if (t >= p.back().t) return p.back().value;
  auto it = std::upper_bound(p.begin(), p.end(), t, [](double v, const ProfilePoint& q) { return v < q.t; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  double f = (t - a.t) / (b.t - a.t);
  return a.value + f * (b.value - a.value);
}

struct Kinematics {
  double x, y, heading, speed;
};

Kinematics kinematics(const std::vector<Waypoint>& w, double t) {
  if (t <= w.front().t) {
    return {w.front().x, w.front().y, 0.0, 0.0};
  }
  if (t >= w.back().t) {
    // Hold the last position; heading from the last moving segment.
    double heading = 0.0;
    for (std::size_t i = w.size() - 1; i > 0; --i) {
      double dx = w[i].x - w[i - 1].x, dy = w[i].y - w[i - 1].y;
      if (dx != 0.0 || dy != 0.0) {
        heading = std::atan2(dy, dx);
        break;
      }
    }
    return {w.back().x, w.back().y, heading, 0.0};
  }
  auto it = std::upper_bound(w.begin(), w.end(), t, [](double v, const Waypoint& q) { return v < q.t; });
  std::size_t i = static_cast<std::size_t>(it - w.begin()) - 1;
  const auto& a = w[i];
  const auto& b = w[i + 1];
  double f = (t - a.t) / (b.t - a.t);
  double dx = b.x - a.x, dy = b.y - a.y;
  double heading = 0.0;
  double speed = std::hypot(dx, dy) / (b.t - a.t);
  if (dx != 0.0 || dy != 0.0) {
    heading = std::atan2(dy, dx);
  } else {
    for (std::size_t j = i; j > 0; --j) {
      double px = w[j].x - w[j - 1].x, py = w[j].y - w[j - 1].y;
      if (px != 0.0 || py != 0.0) {
        heading = std::atan2(py, px);
        break;
      }
    }
  }
  return {a.x + f * dx, a.y + f * dy, heading, speed};
}

ResidentTruth resident_truth(const ResidentScript& r, double t) {
  ResidentTruth out;
  out.id = r.id;
  out.present = find_interval(r.away_intervals, t) == nullptr;
  auto k = kinematics(r.waypoints, t);
  out.x = k.x;
  out.y = k.y;
  out.heading = k.heading;
  out.speed = k.speed;
  const auto* act = find_interval(r.activity_timeline, t);
  out.activity = act ? act->label : "idle";
  const auto* emo = find_interval(r.emotion_timeline, t);
  out.emotion = emo ? emo->label : "neutral";
  if (out.present) {
    out.posture = default_posture_for_activity(out.activity);
    out.speaking = find_interval(r.speech_intervals, t) != nullptr;
    out.stepping = out.speed > 0.05 || out.activity == "exercising";
  } else {
    out.posture = Posture::unknown;
    out.speed = 0.0;
  }
  return out;
}

struct TemplateJoint {
  double forward, left, z;
};

using Template = std::array<TemplateJoint, kJointCount>;

const Template& posture_template(Posture p) {
  using B = BodyDimensions;
  constexpr double hip_w = 0.12, sh_w = 0.20, el_w = 0.25;
  constexpr double stand_hip = B::ankle_height + B::shin + B::thigh;
  static const Template standing = {{
      {0, 0, stand_hip + B::torso + B::neck},
      {0, sh_w, stand_hip + B::torso},
      {0, -sh_w, stand_hip + B::torso},
      {0, el_w, 1.15},
      {0, -el_w, 1.15},
      {0.05, el_w, 0.90},
      {0.05, -el_w, 0.90},
      {0, hip_w, stand_hip},
      {0, -hip_w, stand_hip},
      {0, hip_w, B::ankle_height + B::shin},
      {0, -hip_w, B::ankle_height + B::shin},
      {0, hip_w, B::ankle_height},
      {0, -hip_w, B::ankle_height},
  }};
  // Seated on a 0.5 m chair, thighs horizontal, shins vertical.
  constexpr double seat = 0.50;
  static const Template sitting = {{
      {0, 0, seat + B::torso + B::neck},
      {0, sh_w, seat + B::torso},
      {0, -sh_w, seat + B::torso},
      {0.10, el_w, 0.75},
      {0.10, -el_w, 0.75},
      {0.35, 0.20, 0.70},
      {0.35, -0.20, 0.70},
      {0, hip_w, seat},
      {0, -hip_w, seat},
      {B::thigh, hip_w, seat},
      {B::thigh, -hip_w, seat},
      {B::thigh, hip_w, seat - B::shin},
      {B::thigh, -hip_w, seat - B::shin},
  }};
  // On a 0.55 m bed, head toward `heading`.
  constexpr double bed = 0.55;
  static const Template lying = {{
      {B::torso + B::neck, 0, bed + 0.03},
      {B::torso, sh_w, bed},
      {B::torso, -sh_w, bed},
      {0.30, 0.30, bed},
      {0.30, -0.30, bed},
      {0.05, 0.30, bed},
      {0.05, -0.30, bed},
      {0, hip_w, bed},
      {0, -hip_w, bed},
      {-B::thigh, hip_w, bed},
      {-B::thigh, -hip_w, bed},
      {-(B::thigh + B::shin), hip_w, bed},
      {-(B::thigh + B::shin), -hip_w, bed},
  }};
  switch (p) {
    case Posture::sitting: return sitting;
    case Posture::lying: return lying;
    default: return standing;
  }
}

}  // namespace

GroundTruth truth_at(const Scenario& s, Nanos t) {
  if (t < 0 || t > s.duration_ns()) {
    throw Error(Errc::out_of_range, "truth_at: t=" + std::to_string(t) + " ns outside scenario");
  }
  const double ts = ns_to_seconds(t);
  GroundTruth g;
  g.time = t;
  for (const auto& r : s.residents) g.residents.push_back(resident_truth(r, ts));
  for (const auto& d : s.devices) g.device_states[d.id] = d.initial_state;
  for (const auto& e : s.device_events) {
    if (e.t > ts) break;
    g.device_states[e.device_id] = e.state;
  }
  g.temperature_c = interpolate(s.environment.temperature_c, ts, 21.0);
  g.humidity_rh = interpolate(s.environment.humidity_rh, ts, 45.0);
  return g;
}

Skeleton synthesize_skeleton(double x, double y, double heading, Posture posture) {
  const auto& tpl = posture_template(posture);
  const double c = std::cos(heading), s = std::sin(heading);
  Skeleton out;
  for (int j = 0; j < kJointCount; ++j) {
    const auto& tj = tpl[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(j)] =
        Eigen::Vector3d(x + tj.forward * c - tj.left * s, y + tj.forward * s + tj.left * c, tj.z);
  }
  return out;
}

PersonObservation project_keypoints(const SensorSpec& camera, const Skeleton& skeleton,
                                    const ProjectionNoise& noise, float confidence) {
  PersonObservation obs;
  int in_view = 0;
  for (int j = 0; j < kJointCount; ++j) {
    auto& kp = obs.keypoints[static_cast<std::size_t>(j)];
    auto uv = project(*camera.pose, *camera.intrinsics, skeleton[static_cast<std::size_t>(j)]);
    if (!uv || !in_frame(*uv)) continue;
    Eigen::Vector2d p = *uv;
    if (noise.sigma > 0.0) {
      p.x() += noise.sigma * rng::gaussian(rng::mix({noise.key, static_cast<std::uint64_t>(j), 0}));
      p.y() += noise.sigma * rng::gaussian(rng::mix({noise.key, static_cast<std::uint64_t>(j), 1}));
      if (!in_frame(p)) continue;
    }
    kp.u = p.x();
    kp.v = p.y();
    kp.confidence = confidence;
    kp.in_view = true;
    ++in_view;
  }
  obs.detected = in_view >= 6;
  return obs;
}

EmotionEffect emotion_effect(std::string_view e) {
  if (e == "happy") return {1.10, 0.03, 0.55, 0.08};
  if (e == "sad") return {0.80, 0.04, 0.25, 0.03};
  if (e == "angry") return {1.15, 0.05, 0.80, 0.15};
  if (e == "fearful") return {1.05, 0.15, 0.35, 0.10};
  if (e == "surprised") return {1.00, 0.06, 0.60, 0.20};
  if (e == "disgusted") return {0.90, 0.04, 0.40, 0.06};
  if (e == "tired") return {0.75, 0.10, 0.25, 0.03};
  if (e == "excited") return {1.30, 0.05, 0.65, 0.20};
  return {};
}

GaitModel::GaitModel(const Scenario& s) : steps_(s.residents.size()) {
  for (std::size_t r = 0; r < s.residents.size(); ++r) {
    const auto& script = s.residents[r];
    rng::Stream noise(rng::mix({s.seed, 0x6A17ULL, r}));
    double t = 0.0;
    while (t < s.duration_s) {
      auto truth = resident_truth(script, t);
      if (!truth.stepping) {
        t += 0.05;
        continue;
      }
      auto fx = emotion_effect(truth.emotion);
      double base = truth.activity == "exercising" ? kExerciseCadenceSpm : script.gait.cadence_spm;
      double cadence = base * fx.cadence_factor;
      double cv = script.gait.cadence_cv * (fx.cadence_cv / 0.03);
      double nominal = 60.0 / cadence;
      double interval = std::clamp(nominal * (1.0 + cv * noise.gaussian()), 0.5 * nominal, 1.5 * nominal);
      steps_[r].push_back(t);
      t += interval;
    }
  }
}

double GaitModel::force_factor(std::size_t r, double t) const {
  const auto& st = steps_[r];
  auto it = std::upper_bound(st.begin(), st.end(), t);
  if (it == st.begin() || it == st.end()) return 1.0;
  double a = *(it - 1), b = *it;
  // A pause in stepping longer than a slow stride means the resident stopped.
  if (b - a > 1.5) return 1.0;
  return 1.0 + kStepForceAmplitude * std::cos(2.0 * std::numbers::pi * (t - a) / (b - a));
}

Simulator::Simulator(const Scenario& scenario) : scenario_(scenario), gait_(scenario) {}

SamplePayload Simulator::observe(const SensorSpec& sensor, Nanos t, std::uint64_t index) const {
  const auto truth = truth_at(scenario_, t);
  const std::uint64_t key = rng::mix({scenario_.seed, sensor.device_id, index});
  const auto& n = sensor.noise;

  switch (sensor.modality) {
    case Modality::camera: {
      CameraObservation obs;
      for (std::size_t r = 0; r < truth.residents.size(); ++r) {
        const auto& res = truth.residents[r];
        if (!res.present) continue;
        PersonObservation p;
        if (sensor.privacy_zone && sensor.privacy_zone->contains(res.x, res.y)) {
          p.detected = false;
        } else {
          auto skel = synthesize_skeleton(res.x, res.y, res.heading, res.posture);
          p = project_keypoints(sensor, skel, {n.keypoint_sigma, rng::mix({key, r})},
                                static_cast<float>(n.keypoint_confidence));
        }
        p.resident_index = static_cast<std::uint8_t>(r);
        obs.person_detected = obs.person_detected || p.detected;
        obs.persons.push_back(p);
      }
      return obs;
    }
    case Modality::microphone: {
      double energy = n.audio_floor;
      bool voiced = false;
      for (std::size_t r = 0; r < truth.residents.size(); ++r) {
        const auto& res = truth.residents[r];
        if (!res.speaking) continue;
        auto fx = emotion_effect(res.emotion);
        energy += fx.voice_level + fx.voice_variability * rng::gaussian(rng::mix({key, r, 7}));
        voiced = true;
      }
      energy += n.audio_sigma * rng::gaussian(rng::mix({key, 0xA0}));
      energy = std::clamp(energy, 0.0, 1.0);
      double voiced_energy = voiced ? 0.85 * energy : std::clamp(0.3 * n.audio_floor, 0.0, 1.0);
      return AudioSample{static_cast<float>(energy), static_cast<float>(voiced_energy)};
    }
    case Modality::floor_pressure: {
      const auto& g = *sensor.grid;
      FloorFrame f;
      f.cols = g.cols;
      f.rows = g.rows;
      f.cells.assign(std::size_t{g.cols} * g.rows, 0.0f);
      const double sigma2 = kFootprintSigmaM * kFootprintSigmaM;
      const double cell_area_norm = g.pitch_m * g.pitch_m / (2.0 * std::numbers::pi * sigma2);
      const double reach = 4.0 * kFootprintSigmaM;
      const double ts = ns_to_seconds(t);
      std::vector<double> raw(f.cells.size(), 0.0);
      std::vector<bool> touched(f.cells.size(), false);
      for (std::size_t r = 0; r < truth.residents.size(); ++r) {
        const auto& res = truth.residents[r];
        if (!res.present) continue;
        double weight = scenario_.residents[r].body_mass_kg * kStandardGravity;
        if (res.stepping) weight *= gait_.force_factor(r, ts);
        int c0 = std::max(0, static_cast<int>(std::floor((res.x - reach - g.origin_x) / g.pitch_m)));
        int c1 = std::min<int>(g.cols - 1, static_cast<int>(std::floor((res.x + reach - g.origin_x) / g.pitch_m)));
        int r0 = std::max(0, static_cast<int>(std::floor((res.y - reach - g.origin_y) / g.pitch_m)));
        int r1 = std::min<int>(g.rows - 1, static_cast<int>(std::floor((res.y + reach - g.origin_y) / g.pitch_m)));
        for (int row = r0; row <= r1; ++row) {
          for (int col = c0; col <= c1; ++col) {
            double dx = g.cell_center_x(col) - res.x;
            double dy = g.cell_center_y(row) - res.y;
            std::size_t i = static_cast<std::size_t>(row) * g.cols + static_cast<std::size_t>(col);
            raw[i] += weight * cell_area_norm * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma2));
            touched[i] = true;
          }
        }
      }
      // Noise only near loaded cells; elsewhere it sits under the deadband.
      for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!touched[i]) continue;
        double v = raw[i];
        if (n.floor_sigma_n > 0) v += n.floor_sigma_n * rng::gaussian(rng::mix({key, i}));
        if (v < n.floor_deadband_n) v = 0.0;
        f.cells[i] = quantize_force(static_cast<float>(v));
      }
      return f;
    }
    case Modality::environment: {
      double temp = truth.temperature_c + n.temperature_sigma_c * rng::gaussian(rng::mix({key, 1}));
      double hum = truth.humidity_rh + n.humidity_sigma_rh * rng::gaussian(rng::mix({key, 2}));
      return EnvSample{static_cast<float>(temp), static_cast<float>(std::clamp(hum, 0.0, 100.0))};
    }
    case Modality::device_usage: {
      DeviceId dev = sensor.watch_devices[index % sensor.watch_devices.size()];
      auto it = truth.device_states.find(dev);
      return UsageSample{dev, it == truth.device_states.end() ? std::string("unknown") : it->second};
    }
  }
  throw Error(Errc::validation_error, "sensor has unknown modality");
}

std::vector<SensorSample> Simulator::emit(const SensorSpec& sensor, Nanos t_start, Nanos t_end) const {
  std::vector<SensorSample> out;
  const Nanos duration = scenario_.duration_ns();
  t_start = std::max<Nanos>(t_start, 0);
  t_end = std::min(t_end, duration);
  if (t_end <= t_start) return out;
  const double period_ns = 1e9 / sensor.rate_hz;
  const Nanos phase = seconds_to_ns(sensor.phase_s);
  auto time_of = [&](std::uint64_t k) {
    return phase + static_cast<Nanos>(std::llround(static_cast<double>(k) * period_ns));
  };
  std::uint64_t k = 0;
  if (t_start > phase) {
    k = static_cast<std::uint64_t>(std::floor(static_cast<double>(t_start - phase) / period_ns));
    while (k > 0 && time_of(k - 1) >= t_start) --k;
    while (time_of(k) < t_start) ++k;
  }
  out.reserve(static_cast<std::size_t>(static_cast<double>(t_end - t_start) / period_ns) + 2);
  for (;; ++k) {
    Nanos t = time_of(k);
    if (t >= t_end) break;
    SensorSample s;
    s.ref_time = t;
    s.device_ts = timebase::device_time(sensor.clock, t, k);
    s.index = k;
    s.payload = observe(sensor, t, k);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<SensorSample>> Simulator::emit_all(Nanos t_start, Nanos t_end) const {
  std::vector<std::vector<SensorSample>> out;
  out.reserve(scenario_.sensors.size());
  for (const auto& s : scenario_.sensors) out.push_back(emit(s, t_start, t_end));
  return out;
}

}  // namespace shf::sensors
