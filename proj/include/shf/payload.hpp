#pragma once

// SAMPLE / HELLO / TIMERESP payload bodies. All multi-byte fields big-endian;
// reals are IEEE-754 bit patterns.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "shf/common.hpp"

namespace shf {

constexpr int kJointCount = 13;

enum class Joint : int {
  head = 0,
  left_shoulder,
  right_shoulder,
  left_elbow,
  right_elbow,
  left_wrist,
  right_wrist,
  left_hip,
  right_hip,
  left_knee,
  right_knee,
  left_ankle,
  right_ankle,
};

struct Keypoint {
  double u = 0.0;
  double v = 0.0;
  float confidence = 0.0f;
  bool in_view = false;

  bool operator==(const Keypoint&) const = default;
};

struct PersonObservation {
  std::uint8_t resident_index = 0;
  bool detected = false;
  std::array<Keypoint, kJointCount> keypoints{};

  bool operator==(const PersonObservation&) const = default;
};

struct CameraObservation {
  bool person_detected = false;
  std::vector<PersonObservation> persons;

  bool operator==(const CameraObservation&) const = default;
};

struct AudioSample {
  float rms_energy = 0.0f;
  float voiced_energy = 0.0f;

  bool operator==(const AudioSample&) const = default;
};

/// Cell values in newtons, row-major (row = y index).
struct FloorFrame {
  std::uint16_t cols = 0;
  std::uint16_t rows = 0;
  std::vector<float> cells;

  double total() const;
  bool operator==(const FloorFrame&) const = default;
};

struct EnvSample {
  float temperature_c = 0.0f;
  float humidity_rh = 0.0f;

  bool operator==(const EnvSample&) const = default;
};

struct UsageSample {
  DeviceId device_id = 0;
  std::string state;

  bool operator==(const UsageSample&) const = default;
};

using SamplePayload =
    std::variant<CameraObservation, AudioSample, FloorFrame, EnvSample, UsageSample>;

Modality payload_modality(const SamplePayload& p);

/// Floor cells travel as u16 in 0.1 N units, so encode quantizes.
std::vector<std::uint8_t> encode_payload(const SamplePayload& p);
SamplePayload decode_payload(Modality modality, std::span<const std::uint8_t> bytes);

/// TIMERESP body: the collector's t0 echoed back plus the device's t1/t2.
struct TimeResponse {
  std::uint64_t t0 = 0;
  std::uint64_t t1 = 0;
  std::uint64_t t2 = 0;
};
std::vector<std::uint8_t> encode_time_response(const TimeResponse& r);
TimeResponse decode_time_response(std::span<const std::uint8_t> bytes);

/// Quantization applied by the floor codec, exposed so simulators and tests
/// agree on it.
float quantize_force(float newtons);

}  // namespace shf
