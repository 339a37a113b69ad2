#pragma once

// Scenario-driven simulator: ground truth and per-sensor observations.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "shf/payload.hpp"
#include "shf/scenario.hpp"
#include "shf/taxonomy.hpp"

namespace shf::sensors {

struct ResidentTruth {
  std::string id;
  bool present = false;
  double x = 0, y = 0;
  double heading = 0;  // radians, direction of travel
  double speed = 0;    // m/s along the scripted path
  Posture posture = Posture::unknown;
  std::string activity;
  std::string emotion;
  bool speaking = false;
  /// True when the resident's gait is producing floor force oscillation.
  bool stepping = false;
};

struct GroundTruth {
  Nanos time = 0;
  std::vector<ResidentTruth> residents;
  std::map<DeviceId, std::string> device_states;
  double temperature_c = 0;
  double humidity_rh = 0;
};

/// Pure; throws Errc::out_of_range outside [0, duration].
GroundTruth truth_at(const Scenario& scenario, Nanos t);

using Skeleton = std::array<Eigen::Vector3d, kJointCount>;

/// Joint positions for a body at (x, y) facing `heading` in `posture`.
Skeleton synthesize_skeleton(double x, double y, double heading, Posture posture);

/// Segment lengths the templates are built from; the standing height they
/// imply is what posture coding compares hip height against.
struct BodyDimensions {
  static constexpr double ankle_height = 0.08;
  static constexpr double shin = 0.42;
  static constexpr double thigh = 0.45;
  static constexpr double torso = 0.50;
  static constexpr double neck = 0.20;
  static constexpr double standing_height = ankle_height + shin + thigh + torso + neck;
};

/// Noise draws for one camera sample; zero sigma disables noise entirely.
struct ProjectionNoise {
  double sigma = 0.0;
  std::uint64_t key = 0;
};

/// Pinhole projection of all joints. Out-of-frustum or behind-camera joints
/// are marked out of view; detected iff at least 6 joints are in view.
PersonObservation project_keypoints(const SensorSpec& camera, const Skeleton& skeleton,
                                    const ProjectionNoise& noise = {},
                                    float confidence = 0.9f);

struct SensorSample {
  Nanos ref_time = 0;       // true emission time on the reference timeline
  Nanos device_ts = 0;      // as stamped by the device clock
  std::uint64_t index = 0;  // sample index since t=0
  SamplePayload payload;
};

/// Precomputed per-resident step instants, shared by every floor sensor.
class GaitModel {
 public:
  explicit GaitModel(const Scenario& scenario);
  /// Multiplicative force modulation for resident `r` at time t (seconds).
  double force_factor(std::size_t r, double t) const;
  const std::vector<double>& steps(std::size_t r) const { return steps_[r]; }

 private:
  std::vector<std::vector<double>> steps_;
};

class Simulator {
 public:
  explicit Simulator(const Scenario& scenario);

  const Scenario& scenario() const { return scenario_; }

  /// Samples of `sensor` whose reference times fall in [t_start, t_end).
  std::vector<SensorSample> emit(const SensorSpec& sensor, Nanos t_start, Nanos t_end) const;

  /// All sensors, in scenario order.
  std::vector<std::vector<SensorSample>> emit_all(Nanos t_start, Nanos t_end) const;

  SamplePayload observe(const SensorSpec& sensor, Nanos t, std::uint64_t index) const;

  const GaitModel& gait() const { return gait_; }

 private:
  const Scenario& scenario_;
  GaitModel gait_;
};

/// Mood-dependent modulation of gait and voice used by the simulator.
struct EmotionEffect {
  double cadence_factor = 1.0;
  double cadence_cv = 0.03;
  double voice_level = 0.45;
  double voice_variability = 0.05;
};
EmotionEffect emotion_effect(std::string_view emotion);

constexpr double kStandardGravity = 9.80665;
constexpr double kFootprintSigmaM = 0.15;
constexpr double kStepForceAmplitude = 0.3;
constexpr double kExerciseCadenceSpm = 150.0;

}  // namespace shf::sensors
