#include "shf/align.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace shf::align {

std::string_view policy_name(Policy p) { return p == Policy::nearest ? "nearest" : "causal_last"; }

Policy parse_policy(std::string_view name) {
  if (name == "causal_last") return Policy::causal_last;
  if (name == "nearest") return Policy::nearest;
  throw Error(Errc::validation_error, "unknown alignment policy '" + std::string(name) + "'");
}

void AlignConfig::validate() const {
  for (std::size_t m = 0; m < window_ns.size(); ++m) {
    if (window_ns[m] <= 0) {
      throw Error(Errc::validation_error,
                  "staleness window for " + std::string(modality_name(static_cast<Modality>(m))) + " must be > 0");
    }
  }
}

Modality select_primary(const AlignConfig& config, const std::map<Modality, double>& available) {
  if (available.empty()) throw Error(Errc::no_streams, "no streams to align");
  if (available.contains(config.primary)) return config.primary;
  // std::map iterates in modality order, so the first maximum is the tie-break winner.
  auto best = available.begin();
  for (auto it = available.begin(); it != available.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

std::size_t primary_stream(const std::vector<Stream>& streams, const AlignConfig& config) {
  std::map<Modality, double> rates;
  for (const auto& s : streams) {
    if (s.samples.empty()) continue;
    rates[s.modality] = std::max(rates[s.modality], s.rate_hz);
  }
  Modality m = select_primary(config, rates);
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (streams[i].modality != m || streams[i].samples.empty()) continue;
    if (!best || streams[i].device_id < streams[*best].device_id) best = i;
  }
  return *best;
}

std::vector<Nanos> mapped_times(const Stream& s) {
  if (!s.mapping) {
    throw Error(Errc::missing_mapping, "no clock mapping for device " + std::to_string(s.device_id));
  }
  std::vector<Nanos> out;
  out.reserve(s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    if (i > 0 && s.samples[i].device_ts < s.samples[i - 1].device_ts) {
      throw Error(Errc::unsorted_stream, "device " + std::to_string(s.device_id) + " sample " + std::to_string(i) +
                                            " goes back in time");
    }
    out.push_back(timebase::to_reference(*s.mapping, s.samples[i].device_ts));
  }
  return out;
}

AlignResult align(const std::vector<Stream>& streams, const AlignConfig& config) {
  config.validate();
  AlignResult out;
  out.primary_stream = primary_stream(streams, config);

  std::vector<std::vector<Nanos>> times;
  times.reserve(streams.size());
  for (const auto& s : streams) {
    times.push_back(mapped_times(s));
    out.input_samples += s.samples.size();
  }

  const std::size_t p = out.primary_stream;
  const auto& pt = times[p];
  const Nanos nominal = static_cast<Nanos>(std::llround(1e9 / streams[p].rate_hz));
  std::vector<std::size_t> cursor(streams.size(), 0);

  auto fill = [&](Nanos tick, std::optional<std::size_t> primary_sample) {
    AlignedRecord rec;
    rec.ref_ts = tick;
    rec.slots.resize(streams.size());
    for (std::size_t s = 0; s < streams.size(); ++s) {
      const auto& ts = times[s];
      auto& c = cursor[s];
      while (c < ts.size() && ts[c] <= tick) ++c;
      if (s == p) {
        if (primary_sample) rec.slots[s] = Slot{*primary_sample, streams[s].samples[*primary_sample].ref, tick, 0};
        continue;
      }
      const Nanos w = config.window(streams[s].modality);
      std::optional<std::size_t> pick;
      // c - 1 is the latest sample at or before the tick (the last of any equal run).
      if (config.policy == Policy::causal_last) {
        if (c > 0 && tick - ts[c - 1] <= w) pick = c - 1;
      } else {
        std::optional<std::size_t> before = c > 0 ? std::optional<std::size_t>(c - 1) : std::nullopt;
        std::optional<std::size_t> after;
        if (c < ts.size()) {
          std::size_t a = c;
          while (a + 1 < ts.size() && ts[a + 1] == ts[a]) ++a;
          after = a;
        }
        if (before && after) {
          pick = (tick - ts[*before] <= ts[*after] - tick) ? before : after;
        } else {
          pick = before ? before : after;
        }
        if (pick && std::abs(tick - ts[*pick]) > w) pick.reset();
      }
      if (pick) rec.slots[s] = Slot{*pick, streams[s].samples[*pick].ref, ts[*pick], tick - ts[*pick]};
    }
    out.records.push_back(std::move(rec));
  };

  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (i + 1 < pt.size() && pt[i + 1] == pt[i]) {
      ++out.duplicate_primary;
      continue;
    }
    if (config.emit_when_primary_missing && !out.records.empty()) {
      Nanos last = out.records.back().ref_ts;
      if (pt[i] - last > 2 * nominal) {
        for (Nanos t = last + nominal; t < pt[i] - nominal / 2; t += nominal) {
          fill(t, std::nullopt);
          ++out.synthetic_ticks;
        }
      }
    }
    fill(pt[i], i);
  }
  return out;
}

const std::vector<Nanos>& staleness_bin_edges() {
  static const std::vector<Nanos> edges = [] {
    std::vector<Nanos> e;
    for (Nanos ms : {0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000}) e.push_back(ms * kNanosPerMilli);
    return e;
  }();
  return edges;
}

CoverageReport coverage_report(const AlignResult& result, const std::vector<Stream>& streams) {
  CoverageReport r;
  if (result.records.empty()) return r;
  const auto& edges = staleness_bin_edges();
  r.records = result.records.size();
  r.input_samples = result.input_samples;
  r.size_ratio = r.input_samples ? static_cast<double>(r.records) / static_cast<double>(r.input_samples) : 0.0;
  r.streams.resize(streams.size());
  for (std::size_t s = 0; s < streams.size(); ++s) {
    auto& c = r.streams[s];
    c.device_id = streams[s].device_id;
    c.modality = streams[s].modality;
    c.records = r.records;
    c.input_samples = streams[s].samples.size();
    c.staleness_histogram.assign(edges.size() + 1, 0);
  }
  for (const auto& rec : result.records) {
    for (std::size_t s = 0; s < rec.slots.size(); ++s) {
      if (!rec.slots[s]) continue;
      auto& c = r.streams[s];
      ++c.filled;
      Nanos a = std::abs(rec.slots[s]->staleness_ns);
      auto bin = static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), a) - edges.begin());
      ++c.staleness_histogram[bin];
    }
  }
  for (auto& c : r.streams) c.fill_rate = static_cast<double>(c.filled) / static_cast<double>(c.records);
  return r;
}

nlohmann::json to_json(const CoverageReport& r) {
  nlohmann::json streams = nlohmann::json::array();
  for (const auto& c : r.streams) {
    streams.push_back({{"device_id", c.device_id},
                       {"modality", modality_name(c.modality)},
                       {"filled", c.filled},
                       {"records", c.records},
                       {"input_samples", c.input_samples},
                       {"fill_rate", c.fill_rate},
                       {"staleness_histogram", c.staleness_histogram}});
  }
  std::vector<double> edges_ms;
  for (Nanos e : staleness_bin_edges()) edges_ms.push_back(static_cast<double>(e) / 1e6);
  return {{"records", r.records},
          {"input_samples", r.input_samples},
          {"size_ratio", r.size_ratio},
          {"staleness_bin_edges_ms", edges_ms},
          {"streams", streams}};
}

}  // namespace shf::align
