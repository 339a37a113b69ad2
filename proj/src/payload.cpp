#include "shf/payload.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "shf/wire.hpp"

namespace shf {

using wire::get_u16;
using wire::get_u32;
using wire::get_u64;
using wire::put_u16;
using wire::put_u32;
using wire::put_u64;

namespace {

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw Error(Errc::bad_payload, "payload shorter than its layout");
  }
  std::uint8_t u8() { need(1); return b_[pos_++]; }
  std::uint16_t u16() { need(2); auto v = get_u16(b_.data() + pos_); pos_ += 2; return v; }
  std::uint32_t u32() { need(4); auto v = get_u32(b_.data() + pos_); pos_ += 4; return v; }
  std::uint64_t u64() { need(8); auto v = get_u64(b_.data() + pos_); pos_ += 8; return v; }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void finish() const {
    if (pos_ != b_.size()) throw Error(Errc::bad_payload, "trailing bytes in payload");
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

struct Encoder {
  std::vector<std::uint8_t>& out;

  void operator()(const CameraObservation& c) const {
    out.push_back(c.person_detected ? 1 : 0);
    out.push_back(static_cast<std::uint8_t>(c.persons.size()));
    for (const auto& p : c.persons) {
      out.push_back(p.resident_index);
      out.push_back(p.detected ? 1 : 0);
      for (const auto& k : p.keypoints) {
        put_f64(out, k.u);
        put_f64(out, k.v);
        put_f32(out, k.confidence);
        out.push_back(k.in_view ? 1 : 0);
      }
    }
  }
  void operator()(const AudioSample& a) const {
    put_f32(out, a.rms_energy);
    put_f32(out, a.voiced_energy);
  }
  void operator()(const FloorFrame& f) const {
    if (f.cells.size() != std::size_t{f.cols} * f.rows) {
      throw Error(Errc::dimension_mismatch, "floor frame cell count does not match grid");
    }
    put_u16(out, f.cols);
    put_u16(out, f.rows);
    for (float c : f.cells) {
      long q = std::lround(std::clamp(c, 0.0f, 6553.5f) * 10.0f);
      put_u16(out, static_cast<std::uint16_t>(q));
    }
  }
  void operator()(const EnvSample& e) const {
    put_f32(out, e.temperature_c);
    put_f32(out, e.humidity_rh);
  }
  void operator()(const UsageSample& u) const {
    if (u.state.size() > 255) throw Error(Errc::bad_payload, "device state longer than 255 bytes");
    put_u16(out, u.device_id);
    out.push_back(static_cast<std::uint8_t>(u.state.size()));
    out.insert(out.end(), u.state.begin(), u.state.end());
  }
};

}  // namespace

double FloorFrame::total() const {
  return std::accumulate(cells.begin(), cells.end(), 0.0);
}

float quantize_force(float newtons) {
  return static_cast<float>(std::lround(std::clamp(newtons, 0.0f, 6553.5f) * 10.0f)) / 10.0f;
}

Modality payload_modality(const SamplePayload& p) {
  return static_cast<Modality>(p.index());
}

std::vector<std::uint8_t> encode_payload(const SamplePayload& p) {
  std::vector<std::uint8_t> out;
  std::visit(Encoder{out}, p);
  return out;
}

SamplePayload decode_payload(Modality modality, std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  switch (modality) {
    case Modality::camera: {
      CameraObservation c;
      c.person_detected = r.u8() != 0;
      const std::size_t n = r.u8();
      c.persons.resize(n);
      for (auto& p : c.persons) {
        p.resident_index = r.u8();
        p.detected = r.u8() != 0;
        for (auto& k : p.keypoints) {
          k.u = r.f64();
          k.v = r.f64();
          k.confidence = r.f32();
          k.in_view = r.u8() != 0;
        }
      }
      r.finish();
      return c;
    }
    case Modality::microphone: {
      AudioSample a;
      a.rms_energy = r.f32();
      a.voiced_energy = r.f32();
      r.finish();
      return a;
    }
    case Modality::floor_pressure: {
      FloorFrame f;
      f.cols = r.u16();
      f.rows = r.u16();
      f.cells.resize(std::size_t{f.cols} * f.rows);
      for (auto& c : f.cells) c = static_cast<float>(r.u16()) / 10.0f;
      r.finish();
      return f;
    }
    case Modality::environment: {
      EnvSample e;
      e.temperature_c = r.f32();
      e.humidity_rh = r.f32();
      r.finish();
      return e;
    }
    case Modality::device_usage: {
      UsageSample u;
      u.device_id = r.u16();
      u.state = r.str(r.u8());
      r.finish();
      return u;
    }
  }
  throw Error(Errc::bad_payload, "unknown modality " + std::to_string(static_cast<int>(modality)));
}

std::vector<std::uint8_t> encode_time_response(const TimeResponse& t) {
  std::vector<std::uint8_t> out;
  put_u64(out, t.t0);
  put_u64(out, t.t1);
  put_u64(out, t.t2);
  return out;
}

TimeResponse decode_time_response(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  TimeResponse t;
  t.t0 = r.u64();
  t.t1 = r.u64();
  t.t2 = r.u64();
  r.finish();
  return t;
}

}  // namespace shf
