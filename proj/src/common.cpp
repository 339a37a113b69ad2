#include "shf/common.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace shf {

namespace {
constexpr std::array<std::string_view, kModalityCount> kModalityNames = {
    "camera", "microphone", "floor_pressure", "environment", "device_usage"};
}

std::string_view modality_name(Modality m) {
  auto i = static_cast<std::size_t>(m);
  return i < kModalityNames.size() ? kModalityNames[i] : std::string_view("unknown");
}

std::optional<Modality> parse_modality(std::string_view name) {
  for (std::size_t i = 0; i < kModalityNames.size(); ++i) {
    if (kModalityNames[i] == name) return static_cast<Modality>(i);
  }
  return std::nullopt;
}

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::negative_delay: return "NegativeDelay";
    case Errc::insufficient_data: return "InsufficientData";
    case Errc::parse_error: return "ParseError";
    case Errc::validation_error: return "ValidationError";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::unknown_field: return "UnknownField";
    case Errc::duplicate_rule_id: return "DuplicateRuleId";
    case Errc::unknown_device: return "UnknownDevice";
    case Errc::unknown_parameter: return "UnknownParameter";
    case Errc::payload_too_large: return "PayloadTooLarge";
    case Errc::bad_magic: return "BadMagic";
    case Errc::unsupported_version: return "UnsupportedVersion";
    case Errc::truncated: return "Truncated";
    case Errc::crc_mismatch: return "CrcMismatch";
    case Errc::bad_payload: return "BadPayload";
    case Errc::segment_full: return "SegmentFull";
    case Errc::write_failure: return "WriteFailure";
    case Errc::corrupt_segment: return "CorruptSegment";
    case Errc::no_streams: return "NoStreams";
    case Errc::unsorted_stream: return "UnsortedStream";
    case Errc::missing_mapping: return "MissingMapping";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::degenerate_geometry: return "DegenerateGeometry";
    case Errc::too_few_cameras: return "TooFewCameras";
    case Errc::no_camera_pair: return "NoCameraPair";
    case Errc::no_source: return "NoSource";
    case Errc::window_too_short: return "WindowTooShort";
    case Errc::order_violation: return "OrderViolation";
    case Errc::bind_failure: return "BindFailure";
    case Errc::io_error: return "IoError";
    case Errc::missing_input: return "MissingInput";
  }
  return "Unknown";
}

std::string read_text_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) throw Error(Errc::missing_input, "no such file " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(Errc::io_error, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io_error, "cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace shf
