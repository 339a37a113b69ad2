#pragma once

// Level 1: frame cleaning and per-record feature extraction.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "shf/common.hpp"
#include "shf/geometry.hpp"
#include "shf/payload.hpp"
#include "shf/scenario.hpp"

namespace shf::features {

// ---- occupancy ----

struct Occupancy {
  bool occupied = false;
  std::optional<Eigen::Vector2d> centroid;
  double total_force = 0.0;
};

constexpr double kDefaultForceThreshold = 200.0;

/// Throws dimension_mismatch when the frame does not match the grid.
Occupancy detect_occupancy(const FloorFrame& frame, const sensors::FloorGrid& grid,
                           double force_threshold = kDefaultForceThreshold);

// ---- voice ----

struct VoiceConfig {
  double on_threshold = 0.2;
  double off_threshold = 0.1;
  Nanos hangover_ns = 300 * kNanosPerMilli;
  void validate() const;
};

struct VoiceActivity {
  bool active = false;
  double energy = 0.0;
};

/// Hysteresis on rms energy: on at >= on_threshold, off once energy has
/// stayed below off_threshold for the hangover.
class VoiceDetector {
 public:
  explicit VoiceDetector(VoiceConfig config = {});
  VoiceActivity update(Nanos t, const AudioSample& sample);
  bool active() const { return active_; }

 private:
  VoiceConfig config_;
  bool active_ = false;
  std::optional<Nanos> quiet_since_;
};

// ---- triangulation ----

struct View {
  CameraPose pose;
  Intrinsics intrinsics;
  Eigen::Vector2d uv;
};

struct Triangulated {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double residual = 0.0;  // RMS point-to-ray distance
};

/// Sum of squared point-to-ray distances.
double ray_cost(std::span<const Ray> rays, const Eigen::Vector3d& point);

/// Least-squares intersection of rays. Throws too_few_cameras or
/// degenerate_geometry.
Triangulated triangulate(std::span<const Ray> rays, std::size_t min_cameras = 2);
Triangulated triangulate(std::span<const View> views, std::size_t min_cameras = 2);

// ---- skeleton ----

struct JointEstimate {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double residual = 0.0;
  bool valid = false;
  int cameras = 0;
};

struct Skeleton3D {
  std::array<JointEstimate, kJointCount> joints{};
  std::optional<Eigen::Vector2d> root;
  int valid_count() const;
  const JointEstimate& joint(Joint j) const { return joints[static_cast<std::size_t>(j)]; }
};

struct CameraView {
  CameraPose pose;
  Intrinsics intrinsics;
  PersonObservation person;
};

struct SkeletonConfig {
  double min_confidence = 0.3;
  std::size_t min_cameras = 2;
};

/// Per-joint triangulation over the cameras that see that joint. Throws
/// no_camera_pair with fewer than two views.
Skeleton3D reconstruct_skeleton(std::span<const CameraView> views, const SkeletonConfig& config = {});

// ---- consistency filter ----

/// Presence evidence from each channel; nullopt when the channel had no
/// sample in the record.
struct Evidence {
  std::optional<bool> floor_occupied;
  std::optional<bool> voice_active;
  std::optional<bool> camera_person;
};

struct FilterDecision {
  bool kept = true;
  std::string reason;  // set when dropped
  /// Voice is active while every other present channel sees nobody.
  bool voice_vision_disagreement = false;
};

/// Drops only when every present channel reports an empty room. `relaxed`
/// keeps the record regardless (second-pass feedback).
FilterDecision filter_record(const Evidence& e, bool relaxed = false);

struct FilterResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> dropped;
  std::vector<std::string> reasons;  // parallel to dropped
};

FilterResult consistency_filter(std::span<const Evidence> records, std::span<const bool> relaxed = {});

// ---- tracking ----

struct TrackerConfig {
  double camera_weight = 0.7;
  double floor_weight = 0.3;
  double smoothing = 0.6;
  void validate() const;
};

struct TrackPoint {
  Nanos t = 0;
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
};

class Tracker {
 public:
  explicit Tracker(TrackerConfig config = {});
  /// Throws no_source when both are absent and order_violation when t does
  /// not advance.
  TrackPoint update(Nanos t, const std::optional<Eigen::Vector2d>& camera_root,
                    const std::optional<Eigen::Vector2d>& floor_centroid);
  const std::vector<TrackPoint>& points() const { return points_; }

 private:
  TrackerConfig config_;
  std::vector<TrackPoint> points_;
};

// ---- gait ----

struct ForceSample {
  Nanos t = 0;
  double total = 0.0;
};

struct GaitConfig {
  double peak_ratio = 1.1;  // peak must exceed this multiple of the window median
  double min_force = kDefaultForceThreshold;
  Nanos min_interval_ns = 250 * kNanosPerMilli;
  /// Longer gaps between steps are pauses and split the window into bouts.
  Nanos max_interval_ns = 1500 * kNanosPerMilli;
};

struct GaitFeatures {
  Nanos start = 0;
  Nanos end = 0;
  double mean_speed = 0.0;
  double cadence = 0.0;     // steps per minute
  double cadence_cv = 0.0;
  int steps = 0;
};

/// Step instants among samples in time order.
std::vector<Nanos> detect_steps(std::span<const ForceSample> samples, const GaitConfig& config = {});

/// Features over [start, end). Cadence and its cv come from the inter-step
/// intervals that are not pauses. Throws window_too_short with fewer than two
/// track points inside the window.
GaitFeatures gait_features(std::span<const TrackPoint> track, std::span<const ForceSample> force, Nanos start,
                           Nanos end, const GaitConfig& config = {});

}  // namespace shf::features
