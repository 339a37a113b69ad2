#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace shf {

/// Ordered, versioned label set.
struct Taxonomy {
  std::string name;
  std::vector<std::string> labels;
  int version = 1;

  bool contains(std::string_view label) const;
  /// Position of `label`, or -1.
  int index_of(std::string_view label) const;
  /// Throws validation_error on duplicate or empty labels.
  void validate() const;
};

/// 13 activity labels; `idle` is the catch-all.
const Taxonomy& default_activity_taxonomy();
/// 9 emotion labels; `neutral` is the catch-all.
const Taxonomy& default_emotion_taxonomy();

enum class Posture { standing, sitting, lying, unknown };

std::string_view posture_name(Posture p);
Posture parse_posture(std::string_view name);

/// Body posture the simulator uses when a resident performs `activity`.
Posture default_posture_for_activity(std::string_view activity);

}  // namespace shf
