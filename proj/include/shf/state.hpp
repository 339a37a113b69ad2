#pragma once

// Level 2: windowed behaviour features and rule-table recognition of
// activity and emotion.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shf/features.hpp"
#include "shf/predicate.hpp"
#include "shf/taxonomy.hpp"

namespace shf::state {

/// Hip-midpoint to head elevation below this is lying.
constexpr double kLyingElevationDeg = 30.0;
/// Hip height below this fraction of standing height is sitting.
constexpr double kSittingHipRatio = 0.55;
constexpr int kMinPostureJoints = 6;

Posture posture_code(const features::Skeleton3D& skeleton);

/// One cleaned Level 1 record as consumed by windowing.
struct FrameFeatures {
  Nanos ts = 0;
  bool kept = true;
  std::optional<bool> occupied;       // floor verdict
  std::optional<bool> camera_person;  // any camera reports a person
  std::optional<bool> voice_active;
  double voice_energy = 0.0;
  Posture posture = Posture::unknown;
  std::optional<features::TrackPoint> track;
  std::optional<features::ForceSample> floor;  // distinct samples carry distinct t
  std::optional<double> temperature_c;
  std::optional<double> humidity_rh;
  /// Last known state per device name.
  std::map<std::string, std::string> devices;
};

struct WindowConfig {
  Nanos window_ns = 5 * kNanosPerSecond;
  Nanos stride_ns = 2500 * kNanosPerMilli;
  double start_time_of_day_s = 0.0;  // local time at span start
  features::VoiceConfig voice;
  features::GaitConfig gait;
  void validate() const;
};

struct FeatureWindow {
  Nanos start = 0;
  Nanos end = 0;
  int records = 0;
  int kept = 0;
  double mean_speed = 0.0;
  Posture posture = Posture::unknown;
  double voice_fraction = 0.0;
  double voice_mean = 0.0;
  double voice_std = 0.0;
  double cadence = 0.0;
  double cadence_cv = 0.0;
  int steps = 0;
  std::map<std::string, std::string> devices;  // states at the window midpoint
  std::optional<double> temperature_c;
  std::optional<double> humidity_rh;
  double occupancy_fraction = 0.0;
  double time_of_day_s = 0.0;  // at the midpoint
  bool night = false;
  std::optional<double> mean_x, mean_y;
  std::optional<double> last_x, last_y;  // carried across windows

  Nanos center() const { return start + (end - start) / 2; }
  /// Names of devices whose state is "on" (or any non-off running state).
  std::vector<std::string> active_devices() const;
};

/// Windows over [span_start, span_end) at the configured stride; a span
/// shorter than one window yields a single truncated window.
std::vector<FeatureWindow> window_features(const std::vector<FrameFeatures>& records, Nanos span_start,
                                           Nanos span_end, const WindowConfig& config);

bool is_night(double time_of_day_s);

nlohmann::json to_json(const FeatureWindow& w);
FeatureWindow window_from_json(const nlohmann::json& j);

// ---- rule tables ----

struct Rule {
  std::string id;
  std::string label;
  predicate::Predicate when;
};

struct RuleTable {
  Taxonomy taxonomy;
  std::string fallback;
  std::vector<Rule> rules;
};

struct RuleSet {
  std::string schema;
  RuleTable activity;
  RuleTable emotion;
  std::uint64_t hash = 0;  // of the source text
};

inline constexpr std::string_view kRulesSchema = "shl2/1";

/// Fields a Level 2 predicate may reference.
predicate::Schema window_schema(const std::vector<std::string>& devices);

/// Throws parse_error, unknown_field, unknown_device, duplicate_rule_id or
/// validation_error (labels outside the taxonomy).
RuleSet parse_rules(std::string_view text, const std::vector<std::string>& devices);
RuleSet load_rules(const std::filesystem::path& path, const std::vector<std::string>& devices);

/// Predicate context over a window.
class WindowContext : public predicate::Context {
 public:
  explicit WindowContext(const FeatureWindow& w) : w_(w) {}
  std::optional<predicate::Value> field(std::string_view name) const override;
  std::optional<std::string> device(std::string_view name) const override;

 private:
  const FeatureWindow& w_;
};

struct Label {
  Nanos start = 0;
  Nanos end = 0;
  std::string label;
  double confidence = 0.0;
  std::string rule_id;
};

/// First matching rule wins; the fallback label has confidence 0.5 and rule
/// id "fallback".
Label classify(const FeatureWindow& w, const RuleTable& table);
double confidence_from_slack(const std::optional<double>& slack);

struct WindowLabels {
  Label activity;
  Label emotion;
};

nlohmann::json to_json(const WindowLabels& l);
WindowLabels labels_from_json(const nlohmann::json& j);

/// Runs shorter than min_dwell take the preceding run's label; the first run
/// is exempt. Idempotent.
std::vector<std::string> smooth_labels(const std::vector<std::string>& labels, int min_dwell = 2);

/// Smooths the label stream in place; replaced entries get rule id
/// "smoothed" and confidence 0.5.
void smooth(std::vector<Label>& labels, int min_dwell = 2);

/// Index of the window whose center is nearest to t (ties to the earlier).
std::optional<std::size_t> nearest_window(const std::vector<Nanos>& centers, Nanos t);

}  // namespace shf::state
