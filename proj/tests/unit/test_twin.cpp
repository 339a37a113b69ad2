#include <random>

#include "shf/collector.hpp"
#include "shf/eval.hpp"
#include "shf/pipeline.hpp"
#include "shf/twin.hpp"
#include "support.hpp"

using namespace shf;
using nlohmann::json;

namespace {

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng); }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }
  double real() {
    switch (pick(4)) {
      case 0: return std::uniform_real_distribution<double>(-10, 10)(rng);
      case 1: return std::ldexp(std::uniform_real_distribution<double>(-1, 1)(rng), pick(200) - 100);
      case 2: return static_cast<double>(pick(100));
      default: return 0.1 * pick(1000);
    }
  }
  std::string text() {
    static const std::vector<std::string> parts = {"a", "kitchen", "\xC3\xA9", "\"", "\\", "\x01", " ", "/", "~0", "r"};
    std::string s;
    for (int n = pick(5); n > 0; --n) s += parts[static_cast<std::size_t>(pick(static_cast<int>(parts.size())))];
    return s;
  }
  template <typename T, typename F>
  std::optional<T> maybe(F f) {
    if (coin(0.3)) return std::nullopt;
    return f();
  }

  twin::Snapshot snapshot() {
    twin::Snapshot s;
    s.ts = std::uniform_int_distribution<Nanos>(0, Nanos{1} << 50)(rng);
    s.room = {real(), real(), real(), real(), real()};
    for (int n = pick(4); n > 0; --n) {
      twin::ResidentState r;
      r.id = text();
      r.present = maybe<bool>([&] { return coin(); });
      r.x = maybe<double>([&] { return real(); });
      r.y = maybe<double>([&] { return real(); });
      r.posture = maybe<std::string>([&] { return text(); });
      r.activity = maybe<std::string>([&] { return text(); });
      r.emotion = maybe<std::string>([&] { return text(); });
      r.confidence = maybe<double>([&] { return real(); });
      s.residents.push_back(r);
    }
    for (int n = pick(6); n > 0; --n) {
      s.devices[static_cast<DeviceId>(pick(65536))] = {text(), maybe<std::string>([&] { return text(); })};
    }
    s.environment = {maybe<double>([&] { return real(); }), maybe<double>([&] { return real(); })};
    for (int n = pick(6); n > 0; --n) {
      s.sensor_health[static_cast<DeviceId>(pick(65536))] = {
          maybe<std::string>([&] { return text(); }),
          maybe<Nanos>([&] { return std::uniform_int_distribution<Nanos>(-(Nanos{1} << 60), Nanos{1} << 60)(rng); })};
    }
    s.provenance = {text(), text()};
    return s;
  }

  // A later snapshot sharing most of a's content.
  twin::Snapshot successor(const twin::Snapshot& a) {
    if (coin(0.1)) {
      auto b = snapshot();
      b.ts = a.ts + pick(1000);
      return b;
    }
    auto b = a;
    b.ts = a.ts + pick(3) * 1'000'000;
    for (int n = pick(5); n > 0; --n) {
      switch (pick(7)) {
        case 0:
          if (!b.residents.empty()) b.residents[0].x = maybe<double>([&] { return real(); });
          break;
        case 1:
          if (!b.residents.empty()) b.residents.pop_back();
          break;
        case 2: b.residents.push_back({text(), true, real(), real(), "standing", "walking", "neutral", 0.5}); break;
        case 3:
          if (!b.devices.empty()) b.devices.begin()->second.state = maybe<std::string>([&] { return text(); });
          break;
        case 4: b.devices[static_cast<DeviceId>(pick(65536))] = {text(), std::nullopt}; break;
        case 5:
          if (!b.sensor_health.empty()) b.sensor_health.erase(b.sensor_health.begin());
          break;
        default: b.environment.temperature_c = maybe<double>([&] { return real(); }); break;
      }
    }
    return b;
  }
};

twin::Snapshot small_snapshot() {
  twin::Snapshot s;
  s.ts = 5 * kNanosPerSecond;
  s.room = {0, 0, 10, 6, 2.8};
  s.residents.push_back({"r1", true, 1.0, 2.0, "standing", "cooking", "neutral", 1.0});
  s.devices[101] = {"stove", "on"};
  s.devices[102] = {"kettle", std::nullopt};
  s.environment = {21.5, std::nullopt};
  s.sensor_health[1] = {"active", 4 * kNanosPerSecond};
  s.provenance = {"00ff", "ee11"};
  return s;
}

struct FusedRun {
  test::TempDir dir;
  collector::RunLayout layout;
  std::filesystem::path fused;
  explicit FusedRun(const std::string& scenario)
      : dir("twin-" + scenario), layout{dir.path() / "run"}, fused(dir.path() / "fused") {
    collector::simulate_offline(sensors::load_scenario(test::data_dir() / ("scenario_" + scenario + ".shs")),
                                layout);
    pipeline::fuse(layout.log_dir(), pipeline::load_fuse_config(test::data_dir() / "fuse.json"), fused);
  }
};

const FusedRun& fused_run(const std::string& scenario) {
  static std::map<std::string, std::unique_ptr<FusedRun>> runs;
  auto& slot = runs[scenario];
  if (!slot) slot = std::make_unique<FusedRun>(scenario);
  return *slot;
}

}  // namespace

TEST_CASE("snapshot text form") {
  auto s = small_snapshot();
  auto line = twin::serialize(s);
  CHECK(line.find('\n') == std::string::npos);
  auto j = json::parse(line);
  CHECK(j.at("schema") == "sht/1");
  CHECK(j.at("devices").at("102").at("state").is_null());
  CHECK(j.at("environment").at("humidity_rh").is_null());
  CHECK(twin::parse(line) == s);

  twin::Snapshot empty;
  empty.residents.push_back({"r1", {}, {}, {}, {}, {}, {}, {}});
  auto ej = json::parse(twin::serialize(empty));
  for (const char* k : {"present", "x", "y", "posture", "activity", "emotion", "confidence"}) {
    CHECK_MESSAGE(ej.at("residents").at(0).at(k).is_null(), k);
  }
  CHECK(twin::parse(twin::serialize(empty)) == empty);

  CHECK(test::error_code_of([] { twin::parse("{"); }) == Errc::parse_error);
  auto wrong = j;
  wrong["schema"] = "sht/2";
  CHECK(test::error_code_of([&] { twin::parse(wrong.dump()); }) == Errc::parse_error);
  auto extra = j;
  extra["residents"][0]["mood"] = "fine";
  CHECK(test::error_code_of([&] { twin::parse(extra.dump()); }) == Errc::parse_error);
  auto bad_id = j;
  bad_id["devices"]["x1"] = {{"name", "a"}, {"state", nullptr}};
  CHECK(test::error_code_of([&] { twin::parse(bad_id.dump()); }) == Errc::parse_error);
  auto missing = j;
  missing.erase("provenance");
  CHECK(test::error_code_of([&] { twin::parse(missing.dump()); }) == Errc::parse_error);
}

TEST_CASE("snapshot serialize and parse round-trip fuzz") {
  Gen g(0x5eed);
  for (int i = 0; i < 10000; ++i) {
    auto s = g.snapshot();
    auto back = twin::parse(twin::serialize(s));
    REQUIRE_MESSAGE(back == s, twin::serialize(s));
  }
}

TEST_CASE("snapshot diffs") {
  auto a = small_snapshot();
  CHECK(twin::diff(a, a).empty());
  auto b = a;
  b.ts += kNanosPerSecond;
  b.devices[101].state = "off";
  auto d = twin::diff(a, b);
  REQUIRE(d.changes.size() == 1);
  CHECK(d.changes[0].at("path") == "/devices/101/state");
  CHECK(d.changes[0].at("old") == "on");
  CHECK(d.changes[0].at("value") == "off");
  CHECK(d.from_ts == a.ts);
  CHECK(d.to_ts == b.ts);
  CHECK(twin::apply(a, d) == b);
  CHECK(twin::apply(a, twin::diff_from_json(twin::to_json(d))) == b);

  CHECK(test::error_code_of([&] { twin::diff(b, a); }) == Errc::order_violation);
  CHECK(test::error_code_of([&] { twin::apply(b, d); }) == Errc::validation_error);
  auto reversed = twin::to_json(d);
  reversed["to_ts"] = 0;
  CHECK(test::error_code_of([&] { twin::diff_from_json(reversed); }) == Errc::order_violation);
}

TEST_CASE("diff and apply round-trip fuzz") {
  Gen g(0xd1ff);
  for (int i = 0; i < 10000; ++i) {
    auto a = g.snapshot();
    auto b = g.successor(a);
    auto d = twin::diff(a, b);
    REQUIRE(twin::apply(a, d) == b);
    REQUIRE(twin::diff(b, b).empty());
    for (const auto& op : d.changes) {
      if (op.at("op") != "add") REQUIRE(op.contains("old"));
    }
  }
}

TEST_CASE("snapshots assembled from a fused run") {
  const auto& run = fused_run("daily");
  const auto in = twin::load_inputs(run.fused);
  CHECK(in.end - in.begin == 600 * kNanosPerSecond);

  CHECK(test::error_code_of([&] { twin::build_snapshot(in, in.begin - 1); }) == Errc::out_of_range);
  CHECK(test::error_code_of([&] { twin::build_snapshot(in, in.end + 1); }) == Errc::out_of_range);

  // Before any record: nothing is known about the resident.
  auto first = twin::build_snapshot(in, in.begin);
  REQUIRE(first.residents.size() == 1);
  const auto& r0 = first.residents[0];
  CHECK_FALSE(r0.x);
  CHECK_FALSE(r0.posture);
  CHECK_FALSE(r0.activity);
  CHECK_FALSE(r0.confidence);
  CHECK_FALSE(first.environment.temperature_c);
  CHECK(first.sensor_health.size() == in.sensors.size());
  CHECK(first.provenance.run_id == pipeline::read_json(run.fused / "manifest.json").at("run_id"));

  // Mid-run position is the last track point at or before ts, found by a scan.
  const auto level1 = pipeline::read_jsonl(run.fused / "level1.jsonl");
  for (Nanos ts : {in.begin + 12'345'678'901, in.begin + 333 * kNanosPerSecond, in.end}) {
    std::optional<std::pair<double, double>> expect;
    Nanos best = std::numeric_limits<Nanos>::min();
    for (const auto& j : level1) {
      const auto& tr = j.at("track");
      if (tr.is_null() || tr.at("t").get<Nanos>() > ts || tr.at("t").get<Nanos>() < best) continue;
      best = tr.at("t").get<Nanos>();
      expect = {tr.at("x").get<double>(), tr.at("y").get<double>()};
    }
    auto s = twin::build_snapshot(in, ts);
    REQUIRE(expect);
    REQUIRE(s.residents[0].x);
    CHECK(*s.residents[0].x == expect->first);
    CHECK(*s.residents[0].y == expect->second);
    CHECK(s.residents[0].activity);
    CHECK(s.environment.temperature_c);
    CHECK(s.devices.at(101).state);
    CHECK(twin::build_snapshot(in, ts) == s);
  }
}

TEST_CASE("1 Hz snapshot stream follows the scripted resident") {
  const auto& run = fused_run("daily");
  const auto in = twin::load_inputs(run.fused);
  const auto truth = eval::load_truth(run.layout.truth());
  auto times = twin::stream_times(in, 1.0);
  CHECK(times.size() == 600);
  CHECK(twin::stream_times(in, 4.0).size() == 2400);
  CHECK(test::error_code_of([&] { twin::stream_times(in, 0.0); }) == Errc::validation_error);

  test::TempDir out("twin-stream");
  CHECK(twin::write_stream(in, 1.0, out.path() / "twin.jsonl") == 600);
  auto lines = pipeline::read_jsonl(out.path() / "twin.jsonl");
  REQUIRE(lines.size() == 600);
  Nanos prev = in.begin;
  double worst = 0;
  int scored = 0;
  for (const auto& j : lines) {
    auto s = twin::snapshot_from_json(j);
    CHECK(s.ts > prev);
    prev = s.ts;
    const auto& t = truth[eval::truth_index(s.ts - in.begin, truth.size())];
    const auto& r = s.residents[0];
    if (!t.present || !r.x || !r.present || !*r.present) continue;
    // Positions hold their last value while nothing observes the resident
    // (in bed, for one); only fresh track points are scored.
    if (s.ts - in.track.t[static_cast<std::size_t>(in.track.at(s.ts) - in.track.v.data())] > kNanosPerSecond) continue;
    worst = std::max(worst, std::hypot(*r.x - t.x, *r.y - t.y));
    ++scored;
  }
  CHECK(scored > 450);
  // Tracking error: camera triangulation noise plus one record of lag at walking pace.
  CHECK(worst < 0.25);
}

TEST_CASE("sensor health follows a killed and restarted sensor") {
  const auto& run = fused_run("fault");
  const auto in = twin::load_inputs(run.fused);
  auto during = twin::build_snapshot(in, in.begin + 80 * kNanosPerSecond);
  const auto& h = during.sensor_health.at(2);
  REQUIRE(h.session);
  CHECK(*h.session == "dead");
  REQUIRE(h.last_seen);
  CHECK(*h.last_seen <= in.begin + 60 * kNanosPerSecond);
  CHECK(*h.last_seen > in.begin + 59 * kNanosPerSecond);
  CHECK(*during.sensor_health.at(1).session == "active");

  auto after = twin::build_snapshot(in, in.begin + 100 * kNanosPerSecond);
  CHECK(*after.sensor_health.at(2).session == "active");
  CHECK(*after.sensor_health.at(2).last_seen > in.begin + 90 * kNanosPerSecond);
}
