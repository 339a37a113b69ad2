#include "shf/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

namespace shf::features {

Occupancy detect_occupancy(const FloorFrame& frame, const sensors::FloorGrid& grid, double force_threshold) {
  if (frame.cols != grid.cols || frame.rows != grid.rows ||
      frame.cells.size() != std::size_t{grid.cols} * grid.rows) {
    throw Error(Errc::dimension_mismatch, "floor frame is " + std::to_string(frame.cols) + "x" +
                                              std::to_string(frame.rows) + ", grid is " + std::to_string(grid.cols) +
                                              "x" + std::to_string(grid.rows));
  }
  Occupancy out;
  double sx = 0, sy = 0;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      double f = frame.cells[static_cast<std::size_t>(r) * grid.cols + static_cast<std::size_t>(c)];
      out.total_force += f;
      sx += f * grid.cell_center_x(c);
      sy += f * grid.cell_center_y(r);
    }
  }
  out.occupied = out.total_force >= force_threshold && out.total_force > 0;
  if (out.occupied) out.centroid = Eigen::Vector2d(sx / out.total_force, sy / out.total_force);
  return out;
}

void VoiceConfig::validate() const {
  if (!(off_threshold < on_threshold)) throw Error(Errc::validation_error, "voice off threshold must be below on");
  if (hangover_ns < 0) throw Error(Errc::validation_error, "voice hangover must be >= 0");
}

VoiceDetector::VoiceDetector(VoiceConfig config) : config_(config) { config_.validate(); }

VoiceActivity VoiceDetector::update(Nanos t, const AudioSample& sample) {
  const double e = sample.rms_energy;
  if (!active_) {
    if (e >= config_.on_threshold) {
      active_ = true;
      quiet_since_.reset();
    }
  } else if (e < config_.off_threshold) {
    if (!quiet_since_) quiet_since_ = t;
    if (t - *quiet_since_ >= config_.hangover_ns) {
      active_ = false;
      quiet_since_.reset();
    }
  } else {
    quiet_since_.reset();
  }
  return {active_, e};
}

double ray_cost(std::span<const Ray> rays, const Eigen::Vector3d& p) {
  double c = 0;
  for (const auto& r : rays) {
    Eigen::Vector3d v = p - r.origin;
    c += (v - v.dot(r.direction) * r.direction).squaredNorm();
  }
  return c;
}

Triangulated triangulate(std::span<const Ray> rays, std::size_t min_cameras) {
  if (rays.size() < std::max<std::size_t>(min_cameras, 2)) {
    throw Error(Errc::too_few_cameras, std::to_string(rays.size()) + " rays, need " + std::to_string(min_cameras));
  }
  bool spread = false;
  for (std::size_t i = 0; i < rays.size() && !spread; ++i) {
    for (std::size_t j = i + 1; j < rays.size(); ++j) {
      double s = rays[i].direction.cross(rays[j].direction).norm();
      double c = std::abs(rays[i].direction.dot(rays[j].direction));
      if (std::atan2(s, c) >= 1e-6) {
        spread = true;
        break;
      }
    }
  }
  if (!spread) throw Error(Errc::degenerate_geometry, "rays are parallel");

  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (const auto& r : rays) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity() - r.direction * r.direction.transpose();
    a += m;
    b += m * r.origin;
  }
  Triangulated out;
  out.point = a.ldlt().solve(b);
  out.residual = std::sqrt(ray_cost(rays, out.point) / static_cast<double>(rays.size()));
  return out;
}

Triangulated triangulate(std::span<const View> views, std::size_t min_cameras) {
  std::vector<Ray> rays;
  rays.reserve(views.size());
  for (const auto& v : views) rays.push_back(back_project(v.pose, v.intrinsics, v.uv));
  return triangulate(rays, min_cameras);
}

int Skeleton3D::valid_count() const {
  return static_cast<int>(std::count_if(joints.begin(), joints.end(), [](const auto& j) { return j.valid; }));
}

Skeleton3D reconstruct_skeleton(std::span<const CameraView> views, const SkeletonConfig& config) {
  if (views.size() < 2) throw Error(Errc::no_camera_pair, std::to_string(views.size()) + " camera view(s)");
  Skeleton3D out;
  std::vector<Ray> rays;
  for (int j = 0; j < kJointCount; ++j) {
    rays.clear();
    for (const auto& v : views) {
      const auto& kp = v.person.keypoints[static_cast<std::size_t>(j)];
      if (!kp.in_view || kp.confidence < config.min_confidence) continue;
      rays.push_back(back_project(v.pose, v.intrinsics, Eigen::Vector2d(kp.u, kp.v)));
    }
    auto& est = out.joints[static_cast<std::size_t>(j)];
    est.cameras = static_cast<int>(rays.size());
    if (rays.size() < config.min_cameras) continue;
    try {
      auto t = triangulate(rays, config.min_cameras);
      est.position = t.point;
      est.residual = t.residual;
      est.valid = true;
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_geometry) throw;
    }
  }
  const auto& lh = out.joint(Joint::left_hip);
  const auto& rh = out.joint(Joint::right_hip);
  if (lh.valid && rh.valid) {
    out.root = ((lh.position + rh.position) / 2).head<2>();
  } else if (lh.valid || rh.valid) {
    out.root = (lh.valid ? lh.position : rh.position).head<2>();
  } else if (out.valid_count() > 0) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (const auto& j : out.joints) {
      if (j.valid) sum += j.position;
    }
    out.root = (sum / out.valid_count()).head<2>();
  }
  return out;
}

FilterDecision filter_record(const Evidence& e, bool relaxed) {
  FilterDecision d;
  const bool any_channel = e.floor_occupied || e.voice_active || e.camera_person;
  const bool floor_empty = !e.floor_occupied.value_or(false);
  const bool voice_quiet = !e.voice_active.value_or(false);
  const bool camera_empty = !e.camera_person.value_or(false);
  const bool others_present = e.floor_occupied || e.camera_person;
  d.voice_vision_disagreement = !voice_quiet && others_present && floor_empty && camera_empty;
  if (any_channel && floor_empty && voice_quiet && camera_empty && !relaxed) {
    d.kept = false;
    d.reason = "unoccupied";
  }
  return d;
}

FilterResult consistency_filter(std::span<const Evidence> records, std::span<const bool> relaxed) {
  FilterResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto d = filter_record(records[i], i < relaxed.size() && relaxed[i]);
    if (d.kept) {
      out.kept.push_back(i);
    } else {
      out.dropped.push_back(i);
      out.reasons.push_back(d.reason);
    }
  }
  return out;
}

void TrackerConfig::validate() const {
  if (camera_weight < 0 || floor_weight < 0 || camera_weight + floor_weight <= 0) {
    throw Error(Errc::validation_error, "tracker weights must be >= 0 and not both zero");
  }
  if (!(smoothing > 0 && smoothing <= 1)) throw Error(Errc::validation_error, "tracker smoothing must be in (0, 1]");
}

Tracker::Tracker(TrackerConfig config) : config_(config) { config_.validate(); }

TrackPoint Tracker::update(Nanos t, const std::optional<Eigen::Vector2d>& camera_root,
                           const std::optional<Eigen::Vector2d>& floor_centroid) {
  if (!camera_root && !floor_centroid) throw Error(Errc::no_source, "no position source");
  if (!points_.empty() && t <= points_.back().t) {
    throw Error(Errc::order_violation, "track update at " + std::to_string(t) + " does not advance");
  }
  Eigen::Vector2d m = Eigen::Vector2d::Zero();
  double w = 0;
  if (camera_root) {
    m += config_.camera_weight * *camera_root;
    w += config_.camera_weight;
  }
  if (floor_centroid) {
    m += config_.floor_weight * *floor_centroid;
    w += config_.floor_weight;
  }
  if (w <= 0) {
    // The only present source has zero weight; use it as is.
    m = camera_root ? *camera_root : *floor_centroid;
  } else {
    m /= w;
  }
  TrackPoint p{t, m.x(), m.y(), 0.0};
  if (!points_.empty()) {
    const auto& prev = points_.back();
    p.x = config_.smoothing * m.x() + (1 - config_.smoothing) * prev.x;
    p.y = config_.smoothing * m.y() + (1 - config_.smoothing) * prev.y;
    p.speed = std::hypot(p.x - prev.x, p.y - prev.y) / ns_to_seconds(t - prev.t);
  }
  points_.push_back(p);
  return p;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (v.size() % 2) return hi;
  double lo = *std::max_element(v.begin(), mid);
  return (lo + hi) / 2;
}

}  // namespace

std::vector<Nanos> detect_steps(std::span<const ForceSample> s, const GaitConfig& config) {
  std::vector<double> totals;
  totals.reserve(s.size());
  for (const auto& x : s) totals.push_back(x.total);
  const double floor_level = std::max(config.min_force, config.peak_ratio * median(totals));

  // Local maxima; a plateau counts once, at its first sample.
  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i].total <= s[i - 1].total) continue;
    std::size_t j = i;
    while (j + 1 < s.size() && s[j + 1].total == s[i].total) ++j;
    if (j + 1 >= s.size() || s[j + 1].total >= s[i].total) continue;
    if (s[i].total > floor_level) cand.push_back(i);
  }
  // Stronger peaks claim their neighbourhood first.
  std::vector<std::size_t> order(cand.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s[cand[a]].total > s[cand[b]].total; });
  std::vector<Nanos> accepted;
  for (std::size_t k : order) {
    Nanos t = s[cand[k]].t;
    bool clear = std::all_of(accepted.begin(), accepted.end(),
                             [&](Nanos a) { return std::abs(a - t) >= config.min_interval_ns; });
    if (clear) accepted.push_back(t);
  }
  std::sort(accepted.begin(), accepted.end());
  return accepted;
}

GaitFeatures gait_features(std::span<const TrackPoint> track, std::span<const ForceSample> force, Nanos start,
                           Nanos end, const GaitConfig& config) {
  GaitFeatures g;
  g.start = start;
  g.end = end;
  double speed_sum = 0;
  int n = 0;
  for (const auto& p : track) {
    if (p.t < start || p.t >= end) continue;
    speed_sum += p.speed;
    ++n;
  }
  if (n < 2) throw Error(Errc::window_too_short, std::to_string(n) + " track point(s) in window");
  g.mean_speed = speed_sum / n;

  std::vector<ForceSample> in;
  for (const auto& f : force) {
    if (f.t >= start && f.t < end) in.push_back(f);
  }
  auto steps = detect_steps(in, config);
  g.steps = static_cast<int>(steps.size());
  std::vector<double> iv;
  for (std::size_t i = 1; i < steps.size(); ++i) {
    Nanos d = steps[i] - steps[i - 1];
    if (d <= config.max_interval_ns) iv.push_back(ns_to_seconds(d));
  }
  if (iv.empty()) return g;
  double total = std::accumulate(iv.begin(), iv.end(), 0.0);
  g.cadence = 60.0 * static_cast<double>(iv.size()) / total;
  double mean = total / static_cast<double>(iv.size());
  double var = 0;
  for (double v : iv) var += (v - mean) * (v - mean);
  var /= static_cast<double>(iv.size());
  g.cadence_cv = mean > 0 ? std::sqrt(var) / mean : 0.0;
  return g;
}

}  // namespace shf::features
