#include "shf/timebase.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "shf/random.hpp"

namespace shf::timebase {

void ClockModel::validate() const {
  if (!(std::abs(drift_ppm) <= 1000.0)) {
    throw Error(Errc::validation_error, "clock drift_ppm must satisfy |drift| <= 1000");
  }
  if (!(jitter_sigma_ns >= 0.0)) {
    throw Error(Errc::validation_error, "clock jitter_sigma_ns must be >= 0");
  }
}

Nanos device_time(const ClockModel& model, Nanos true_time, std::uint64_t read_index) {
  long double skew = static_cast<long double>(true_time) * model.drift_ppm * 1e-6L;
  if (model.jitter_sigma_ns > 0.0) {
    skew += model.jitter_sigma_ns * rng::gaussian(rng::mix({model.seed, read_index}));
  }
  return true_time + model.offset_ns + static_cast<Nanos>(std::llround(skew));
}

OffsetDelay estimate_offset_delay(const SyncRound& r) {
  Nanos delay = (r.t3 - r.t0) - (r.t2 - r.t1);
  if (delay < 0) {
    throw Error(Errc::negative_delay,
                "sync round has negative round-trip delay " + std::to_string(delay) + " ns");
  }
  double offset = (static_cast<double>(r.t1 - r.t0) + static_cast<double>(r.t2 - r.t3)) / 2.0;
  return {offset, delay};
}

ClockMapping fit_mapping(std::span<const EpochRound> rounds) {
  // Best (minimum-delay) round per epoch. Ties keep the earlier round.
  std::map<Nanos, std::pair<SyncRound, OffsetDelay>> best;
  for (const auto& er : rounds) {
    OffsetDelay od = estimate_offset_delay(er.round);
    auto it = best.find(er.epoch_ref);
    if (it == best.end() || od.delay_ns < it->second.second.delay_ns) {
      best[er.epoch_ref] = {er.round, od};
    }
  }
  if (best.size() < 2) {
    throw Error(Errc::insufficient_data,
                "fit_mapping needs at least 2 sync epochs, got " + std::to_string(best.size()));
  }

  // Centered least squares in extended precision; x is the reference-side
  // midpoint of the selected round.
  const long double n = static_cast<long double>(best.size());
  long double mean_x = 0, mean_y = 0;
  for (const auto& [epoch, sel] : best) {
    mean_x += (static_cast<long double>(sel.first.t0) + sel.first.t3) / 2.0L;
    mean_y += sel.second.offset_ns;
  }
  mean_x /= n;
  mean_y /= n;
  long double sxx = 0, sxy = 0;
  for (const auto& [epoch, sel] : best) {
    long double dx = (static_cast<long double>(sel.first.t0) + sel.first.t3) / 2.0L - mean_x;
    long double dy = static_cast<long double>(sel.second.offset_ns) - mean_y;
    sxx += dx * dx;
    sxy += dx * dy;
  }
  if (sxx <= 0) {
    throw Error(Errc::insufficient_data, "sync epochs share one reference time");
  }
  long double slope = sxy / sxx;

  ClockMapping m;
  m.drift_ppm = static_cast<double>(slope * 1e6L);
  m.offset_ns = static_cast<double>(mean_y - slope * mean_x);
  m.fitted_at = best.rbegin()->first;
  m.validity_window_ns = static_cast<std::uint64_t>(best.rbegin()->first - best.begin()->first);
  return m;
}

double to_reference_exact(const ClockMapping& mapping, Nanos device_ts) {
  long double r = (static_cast<long double>(device_ts) - mapping.offset_ns) /
                  (1.0L + mapping.drift_ppm * 1e-6L);
  return static_cast<double>(r);
}

Nanos to_reference(const ClockMapping& mapping, Nanos device_ts) {
  long double r = (static_cast<long double>(device_ts) - mapping.offset_ns) /
                  (1.0L + mapping.drift_ppm * 1e-6L);
  return static_cast<Nanos>(std::llroundl(r));
}

std::vector<EpochRound> synthesize_epoch(const ClockModel& model, Nanos epoch_ref,
                                         const ExchangeParams& p,
                                         std::uint64_t first_read_index) {
  std::vector<EpochRound> out;
  out.reserve(static_cast<std::size_t>(std::max(0, p.rounds_per_epoch)));
  for (int i = 0; i < p.rounds_per_epoch; ++i) {
    SyncRound r;
    r.t0 = epoch_ref + i * p.round_spacing_ns;
    Nanos arrive = r.t0 + p.delay_out_ns;
    Nanos depart = arrive + p.turnaround_ns;
    std::uint64_t idx = kSyncReadIndexBase + first_read_index + 2 * static_cast<std::uint64_t>(i);
    r.t1 = device_time(model, arrive, idx);
    r.t2 = device_time(model, depart, idx + 1);
    // Jitter can push t2 below t1; the device clock never runs backwards.
    r.t2 = std::max(r.t2, r.t1);
    r.t3 = depart + p.delay_back_ns;
    out.push_back({r, epoch_ref});
  }
  return out;
}

}  // namespace shf::timebase
