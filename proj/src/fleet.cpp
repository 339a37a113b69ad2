#include "shf/fleet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "shf/payload.hpp"
#include "shf/random.hpp"

namespace shf::fleet {

using nlohmann::json;
using sensors::Scenario;
using sensors::SensorSpec;

namespace {

struct Pending {
  Nanos send_time;
  int order;  // breaks ties: HELLO before anything, BYE after
  wire::MsgType type;
  std::vector<std::uint8_t> payload;
  Nanos device_ts;
};

struct Span {
  Nanos begin, end;
  bool ends_with_bye;
};

std::vector<Span> alive_spans(const Scenario& s, DeviceId id) {
  std::vector<std::pair<Nanos, Nanos>> down;
  for (const auto& f : s.faults) {
    if (f.device_id == id) down.emplace_back(seconds_to_ns(f.kill_s), seconds_to_ns(f.restart_s));
  }
  std::sort(down.begin(), down.end());
  std::vector<Span> out;
  Nanos cursor = 0;
  for (auto [kill, restart] : down) {
    if (kill > cursor) out.push_back({cursor, kill, false});
    cursor = std::max(cursor, restart);
  }
  if (cursor < s.duration_ns()) out.push_back({cursor, s.duration_ns(), true});
  return out;
}

Nanos link_delay(const sensors::LinkParams& link, std::uint64_t key) {
  return link.latency_ns +
         static_cast<Nanos>(std::llround(static_cast<double>(link.latency_jitter_ns) * std::abs(rng::gaussian(key))));
}

}  // namespace

std::vector<EmittedFrame> device_frames(const sensors::Simulator& sim, const SensorSpec& sensor,
                                        const FleetOptions& options) {
  const Scenario& s = sim.scenario();
  const auto& clock = sensor.clock;
  const Nanos base = options.reference_base;
  json descriptor = sensors::sensor_descriptor(sensor, s);
  descriptor["home"]["reference_base_ns"] = base;
  const std::string hello_text = descriptor.dump();
  const std::vector<std::uint8_t> hello_payload(hello_text.begin(), hello_text.end());
  const Nanos heartbeat = seconds_to_ns(s.heartbeat_interval_s);
  const Nanos sync_interval = seconds_to_ns(s.sync.interval_s);
  const auto& ex = s.sync.exchange;
  std::uint64_t control_reads = kControlReadIndexBase;
  std::uint64_t sync_reads = timebase::kSyncReadIndexBase;

  std::vector<EmittedFrame> out;
  std::uint32_t incarnation = 0;
  for (const auto& span : alive_spans(s, sensor.device_id)) {
    std::vector<Pending> pending;
    pending.push_back({span.begin, 0, wire::MsgType::hello, hello_payload,
                       timebase::device_time(clock, base + span.begin, control_reads++)});

    for (auto& smp : sim.emit(sensor, span.begin, span.end)) {
      pending.push_back({smp.ref_time, 1, wire::MsgType::sample, encode_payload(smp.payload),
                         timebase::device_time(clock, base + smp.ref_time, smp.index)});
    }
    for (Nanos t = (span.begin / heartbeat + 1) * heartbeat; t < span.end; t += heartbeat) {
      pending.push_back({t, 1, wire::MsgType::heartbeat, {}, timebase::device_time(clock, base + t, control_reads++)});
    }
    // Sync epochs start 50 ms into each interval so they never coincide with
    // the heartbeat instant.
    for (Nanos epoch = (span.begin / sync_interval) * sync_interval + 50 * kNanosPerMilli; epoch < span.end;
         epoch += sync_interval) {
      if (epoch < span.begin) continue;
      for (int r = 0; r < ex.rounds_per_epoch; ++r) {
        const Nanos t0 = epoch + r * ex.round_spacing_ns;
        const Nanos d_out = link_delay(sensor.link, rng::mix({s.seed, sensor.device_id, 0x5E9D, static_cast<std::uint64_t>(epoch), std::uint64_t(r)}));
        const Nanos recv = t0 + d_out;
        const Nanos send = recv + ex.turnaround_ns;
        if (send >= span.end) break;
        TimeResponse resp;
        resp.t0 = static_cast<std::uint64_t>(base + t0);
        resp.t1 = static_cast<std::uint64_t>(timebase::device_time(clock, base + recv, sync_reads++));
        resp.t2 = static_cast<std::uint64_t>(timebase::device_time(clock, base + send, sync_reads++));
        resp.t2 = std::max(resp.t2, resp.t1);
        pending.push_back({send, 1, wire::MsgType::timeresp, encode_time_response(resp), static_cast<Nanos>(resp.t2)});
      }
    }
    if (span.ends_with_bye) {
      pending.push_back({span.end, 2, wire::MsgType::bye, {}, timebase::device_time(clock, base + span.end, control_reads++)});
    }
    std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
      return a.send_time != b.send_time ? a.send_time < b.send_time : a.order < b.order;
    });

    std::uint32_t seq = 0;
    Nanos last_arrival = 0;
    for (auto& p : pending) {
      wire::Frame f;
      f.msg_type = p.type;
      f.device_id = sensor.device_id;
      f.modality = static_cast<std::uint8_t>(sensor.modality);
      f.sequence = seq;
      f.device_timestamp_ns = static_cast<std::uint64_t>(p.device_ts);
      f.payload = std::move(p.payload);

      EmittedFrame e;
      e.device_id = sensor.device_id;
      e.sequence = seq;
      e.msg_type = p.type;
      e.send_time = p.send_time;
      const std::uint64_t key = rng::mix({s.seed, sensor.device_id, incarnation, seq});
      e.arrival_time = std::max(last_arrival, p.send_time + link_delay(sensor.link, rng::mix({key, 1})));
      last_arrival = e.arrival_time;
      e.bytes = wire::encode_frame(f);
      if (options.link_faults) {
        e.lost = sensor.link.loss_prob > 0 && rng::uniform(rng::mix({key, 2})) < sensor.link.loss_prob;
        if (!e.lost && sensor.link.corrupt_prob > 0 && rng::uniform(rng::mix({key, 3})) < sensor.link.corrupt_prob) {
          auto bit = static_cast<std::size_t>(rng::uniform(rng::mix({key, 4})) * 8.0 * static_cast<double>(e.bytes.size()));
          e.bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
          e.corrupted = true;
        }
      }
      out.push_back(std::move(e));
      ++seq;
    }
    ++incarnation;
  }
  return out;
}

std::vector<EmittedFrame> fleet_frames(const sensors::Simulator& sim, const FleetOptions& options) {
  std::vector<EmittedFrame> all;
  for (const auto& sensor : sim.scenario().sensors) {
    auto frames = device_frames(sim, sensor, options);
    all.insert(all.end(), std::make_move_iterator(frames.begin()), std::make_move_iterator(frames.end()));
  }
  std::stable_sort(all.begin(), all.end(), [](const EmittedFrame& a, const EmittedFrame& b) {
    if (a.arrival_time != b.arrival_time) return a.arrival_time < b.arrival_time;
    if (a.device_id != b.device_id) return a.device_id < b.device_id;
    return a.send_time < b.send_time;
  });
  return all;
}

void write_truth(const Scenario& scenario, const std::filesystem::path& path, Nanos period_ns) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  for (Nanos t = 0; t <= scenario.duration_ns(); t += period_ns) {
    auto g = sensors::truth_at(scenario, t);
    json residents = json::array();
    for (const auto& r : g.residents) {
      residents.push_back({{"id", r.id},
                           {"present", r.present},
                           {"x", r.x},
                           {"y", r.y},
                           {"speed", r.speed},
                           {"posture", posture_name(r.posture)},
                           {"activity", r.activity},
                           {"emotion", r.emotion},
                           {"speaking", r.speaking}});
    }
    json devices = json::object();
    for (const auto& [id, state] : g.device_states) devices[std::to_string(id)] = state;
    json line{{"t", t},
              {"residents", residents},
              {"devices", devices},
              {"temperature_c", g.temperature_c},
              {"humidity_rh", g.humidity_rh}};
    out << line.dump() << '\n';
  }
}

}  // namespace shf::fleet
