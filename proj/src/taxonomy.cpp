#include "shf/taxonomy.hpp"

#include <algorithm>
#include <set>

#include "shf/common.hpp"

namespace shf {

bool Taxonomy::contains(std::string_view label) const { return index_of(label) >= 0; }

int Taxonomy::index_of(std::string_view label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

void Taxonomy::validate() const {
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) throw Error(Errc::validation_error, "taxonomy '" + name + "' has an empty label");
    if (!seen.insert(l).second) {
      throw Error(Errc::validation_error, "taxonomy '" + name + "' repeats label '" + l + "'");
    }
  }
}

const Taxonomy& default_activity_taxonomy() {
  static const Taxonomy t{"activity",
                          {"standing", "walking", "sitting", "lying", "sleeping", "eating",
                           "drinking", "cooking", "cleaning", "reading", "watching_tv",
                           "exercising", "idle"},
                          1};
  return t;
}

const Taxonomy& default_emotion_taxonomy() {
  static const Taxonomy t{"emotion",
                          {"neutral", "happy", "sad", "angry", "fearful", "surprised",
                           "disgusted", "tired", "excited"},
                          1};
  return t;
}

std::string_view posture_name(Posture p) {
  switch (p) {
    case Posture::standing: return "standing";
    case Posture::sitting: return "sitting";
    case Posture::lying: return "lying";
    case Posture::unknown: return "unknown";
  }
  return "unknown";
}

Posture parse_posture(std::string_view name) {
  if (name == "standing") return Posture::standing;
  if (name == "sitting") return Posture::sitting;
  if (name == "lying") return Posture::lying;
  return Posture::unknown;
}

Posture default_posture_for_activity(std::string_view a) {
  if (a == "lying" || a == "sleeping") return Posture::lying;
  if (a == "sitting" || a == "eating" || a == "reading" || a == "watching_tv") {
    return Posture::sitting;
  }
  return Posture::standing;
}

}  // namespace shf
