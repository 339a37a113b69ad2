#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace shf {

/// Nanoseconds on either a device timeline or the reference timeline.
using Nanos = std::int64_t;

constexpr Nanos kNanosPerSecond = 1'000'000'000;
constexpr Nanos kNanosPerMilli = 1'000'000;

constexpr Nanos seconds_to_ns(double s) {
  return static_cast<Nanos>(s * 1e9 + (s >= 0 ? 0.5 : -0.5));
}
constexpr double ns_to_seconds(Nanos ns) { return static_cast<double>(ns) * 1e-9; }

using DeviceId = std::uint16_t;

enum class Modality : std::uint8_t {
  camera = 0,
  microphone = 1,
  floor_pressure = 2,
  environment = 3,
  device_usage = 4,
};

constexpr int kModalityCount = 5;

std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);
inline bool is_known_modality(std::uint8_t raw) { return raw < kModalityCount; }

/// Every typed failure the library raises. Callers switch on `code()`.
enum class Errc {
  // timebase
  negative_delay,
  insufficient_data,
  // scenario / config / rules
  parse_error,
  validation_error,
  out_of_range,
  unknown_field,
  duplicate_rule_id,
  unknown_device,
  unknown_parameter,
  // wire
  payload_too_large,
  bad_magic,
  unsupported_version,
  truncated,
  crc_mismatch,
  bad_payload,
  // storage
  segment_full,
  write_failure,
  corrupt_segment,
  // fusion
  no_streams,
  unsorted_stream,
  missing_mapping,
  dimension_mismatch,
  degenerate_geometry,
  too_few_cameras,
  no_camera_pair,
  no_source,
  window_too_short,
  order_violation,
  // io / runtime
  bind_failure,
  io_error,
  missing_input,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Whole file as text. Throws missing_input when absent, io_error otherwise.
std::string read_text_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename. Throws io_error.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace shf
