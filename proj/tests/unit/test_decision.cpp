#include <algorithm>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "shf/decision.hpp"
#include "support.hpp"

using namespace shf;
using namespace shf::decision;
using nlohmann::json;

namespace {

const std::vector<std::string> kDevices = {"stove", "kettle", "tv",          "lamp",
                                           "vacuum", "fan",   "night_light", "speaker"};

RuleSet default_rules() { return load_rules(test::data_dir() / "default.shr", kDevices); }

std::string rules_text(const std::string& rules, const std::string& overrides = "{}") {
  return R"({"schema": "shr/1", "rules": [)" + rules + R"(], "overrides": )" + overrides + "}";
}

WindowState window(Nanos ts, std::string activity, std::map<std::string, std::string> devices = {}) {
  WindowState w;
  w.ts = ts;
  w.activity = std::move(activity);
  w.devices = std::move(devices);
  return w;
}

std::vector<ActuatorCommand> replay(const RuleSet& rules, const ScriptedTrace& trace, const std::string& resident) {
  Engine engine(apply_overrides(rules, resident), resident, trace.devices);
  std::vector<ActuatorCommand> out;
  for (const auto& w : trace.windows) {
    for (auto& c : engine.step(w).commands) out.push_back(std::move(c));
  }
  return out;
}

std::string dump_lines(const std::vector<ActuatorCommand>& cmds) {
  std::string out;
  for (const auto& c : cmds) out += to_json(c).dump() + "\n";
  return out;
}

}  // namespace

TEST_CASE("rule files load and reject malformed input") {
  CHECK(parse_rules("", kDevices).rules.empty());
  CHECK(parse_rules("  \n", kDevices).rules.empty());
  CHECK(parse_rules(rules_text(""), kDevices).rules.empty());

  auto rs = default_rules();
  CHECK(rs.rules.size() == 8);
  for (const auto& r : rs.rules) CHECK(r.hold_windows >= 1);
  CHECK(rs.find("kettle_off")->hold_windows == 3);
  CHECK(rs.find("fan_on_hot")->params.at("temp_high") == 26.0);

  const std::string ok = R"({"id": "a", "when": "activity == \"idle\"", "command": {"device": "tv", "action": "off"}})";
  CHECK(test::error_code_of([&] { parse_rules(rules_text(ok + "," + ok), kDevices); }) == Errc::duplicate_rule_id);
  CHECK(test::error_code_of([&] { parse_rules("{", kDevices); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { parse_rules(R"({"schema": "shr/2"})", kDevices); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { parse_rules(R"({"schema": "shr/1", "extra": 1})", kDevices); }) ==
        Errc::unknown_field);
  CHECK(test::error_code_of([&] {
          parse_rules(rules_text(R"({"id": "a", "when": "mood == 1", "command": {"device": "tv", "action": "off"}})"),
                      kDevices);
        }) == Errc::unknown_field);
  CHECK(test::error_code_of([&] {
          parse_rules(rules_text(R"({"id": "a", "when": "night", "command": {"device": "toaster", "action": "off"}})"),
                      kDevices);
        }) == Errc::unknown_device);
  CHECK(test::error_code_of([&] {
          parse_rules(rules_text(R"({"id": "a", "when": "device.toaster == \"on\"", "command": {"device": "tv", "action": "off"}})"),
                      kDevices);
        }) == Errc::unknown_device);
  CHECK(test::error_code_of([&] {
          parse_rules(rules_text(R"({"id": "a", "when": "temperature > $hot", "command": {"device": "fan", "action": "on"}})"),
                      kDevices);
        }) == Errc::unknown_parameter);
  CHECK(test::error_code_of([&] {
          parse_rules(rules_text(R"({"id": "a", "when": "night", "hold_windows": 0, "command": {"device": "tv", "action": "off"}})"),
                      kDevices);
        }) == Errc::validation_error);
  CHECK(test::error_code_of([&] {
          parse_rules(rules_text(R"({"id": "a", "when": "night", "cooldown_s": -1, "command": {"device": "tv", "action": "off"}})"),
                      kDevices);
        }) == Errc::validation_error);
  CHECK(test::error_code_of([&] {
          parse_rules(rules_text(R"({"id": "a", "when": "night", "command": {"device": "tv", "verb": "off"}})"), kDevices);
        }) == Errc::unknown_field);
  CHECK(test::error_code_of([&] { parse_rules(rules_text(ok, R"({"r1": {"a": {"nope": 1}}})"), kDevices); }) ==
        Errc::unknown_parameter);
  CHECK(test::error_code_of([&] { parse_rules(rules_text(ok, R"({"r1": {"b": {"cooldown_s": 1}}})"), kDevices); }) ==
        Errc::unknown_parameter);
  CHECK(test::error_code_of([&] { load_rules(test::data_dir() / "missing.shr", kDevices); }) == Errc::missing_input);
}

TEST_CASE("hold counters and candidates") {
  auto rs = parse_rules(
      rules_text(R"({"id": "a", "when": "activity == \"idle\"", "command": {"device": "tv", "action": "off"}, "hold_windows": 2})"),
      kDevices);
  RuleCounters counters;
  auto c1 = evaluate(rs, window(1, "walking"), {}, counters);
  CHECK_FALSE(c1.evaluations[0].value);
  CHECK(c1.evaluations[0].counter == 0);
  CHECK_FALSE(c1.evaluations[0].candidate);

  auto c2 = evaluate(rs, window(2, "idle"), {}, c1.counters);
  CHECK(c2.evaluations[0].counter == 1);
  CHECK_FALSE(c2.evaluations[0].candidate);
  auto c3 = evaluate(rs, window(3, "idle"), {}, c2.counters);
  CHECK(c3.evaluations[0].counter == 2);
  CHECK(c3.evaluations[0].candidate);

  // Pure given counters.
  auto again = evaluate(rs, window(3, "idle"), {}, c2.counters);
  CHECK(again.evaluations[0].counter == 2);
  CHECK(again.counters.hold == c3.counters.hold);

  auto c4 = evaluate(rs, window(4, "walking"), {}, c3.counters);
  CHECK(c4.evaluations[0].counter == 0);
}

TEST_CASE("idle with the stove on becomes a stove_off candidate") {
  auto rs = default_rules();
  std::map<std::string, std::string> dev = {{"stove", "on"}};
  RuleCounters counters;
  auto c1 = evaluate(rs, window(1, "idle", dev), dev, counters);
  auto c2 = evaluate(rs, window(2, "idle", dev), dev, c1.counters);
  std::vector<std::string> cands;
  for (const auto& e : c2.evaluations) {
    if (e.candidate) cands.push_back(e.rule_id);
  }
  CHECK(cands == std::vector<std::string>{"stove_off"});
}

TEST_CASE("arbitration keeps one command per device") {
  auto rs = parse_rules(rules_text(R"(
      {"id": "low", "when": "night", "command": {"device": "lamp", "action": "dim"}, "hold_windows": 1, "priority": 3},
      {"id": "high", "when": "night", "command": {"device": "lamp", "action": "off"}, "hold_windows": 1, "priority": 5},
      {"id": "b_tie", "when": "night", "command": {"device": "tv", "action": "off"}, "hold_windows": 1, "priority": 1},
      {"id": "a_tie", "when": "night", "command": {"device": "tv", "action": "mute"}, "hold_windows": 1, "priority": 1},
      {"id": "solo", "when": "night", "command": {"device": "fan", "action": "off"}, "hold_windows": 1})"),
                        kDevices);
  WindowState w = window(10, "idle");
  w.night = true;
  auto cand = evaluate(rs, w, {}, {});
  auto cmds = arbitrate(rs, cand.evaluations, w, "r1");
  REQUIRE(cmds.size() == 3);
  CHECK(cmds[0].cause == "high");
  CHECK(cmds[0].action == "off");
  CHECK(cmds[1].cause == "a_tie");
  CHECK(cmds[2].cause == "solo");
  CHECK(cand.evaluations[0].suppressed == Suppression::priority);
  CHECK(cand.evaluations[2].suppressed == Suppression::priority);
  CHECK(cand.evaluations[1].fired);
  for (const auto& c : cmds) {
    CHECK(c.issue_ts == 10);
    CHECK(c.resident == "r1");
  }
}

TEST_CASE("cooldown suppresses re-candidates") {
  auto rs = parse_rules(rules_text(R"({"id": "a", "when": "night", "command": {"device": "tv", "action": "off"},
                                       "hold_windows": 1, "cooldown_s": 10})"),
                        kDevices);
  Engine engine(rs, "r1");
  std::vector<Nanos> fired;
  for (int k = 0; k < 30; ++k) {
    WindowState w = window(k * kNanosPerSecond, "idle");
    w.night = true;
    auto t = engine.step(w);
    if (!t.commands.empty()) fired.push_back(t.ts);
    if (k == 1) CHECK(t.rules[0].suppressed == Suppression::cooldown);
  }
  CHECK(fired == std::vector<Nanos>{0, 10 * kNanosPerSecond, 20 * kNanosPerSecond});
}

TEST_CASE("overrides substitute parameters only") {
  auto rs = default_rules();
  auto same = apply_overrides(rs, "nobody");
  REQUIRE(same.rules.size() == rs.rules.size());
  for (std::size_t i = 0; i < rs.rules.size(); ++i) {
    CHECK(same.rules[i].cooldown_s == rs.rules[i].cooldown_s);
    CHECK(same.rules[i].params == rs.rules[i].params);
    CHECK(same.rules[i].when.text() == rs.rules[i].when.text());
  }

  auto text = rules_text(R"({"id": "a", "when": "night", "command": {"device": "tv", "action": "off"}, "cooldown_s": 60})",
                         R"({"r1": {"a": {"cooldown_s": 300}}})");
  auto custom = parse_rules(text, kDevices);
  CHECK(apply_overrides(custom, "r1").rules[0].cooldown_s == 300);
  CHECK(apply_overrides(custom, "r2").rules[0].cooldown_s == 60);
  CHECK(custom.rules[0].cooldown_s == 60);

  auto r2 = apply_overrides(rs, "r2");
  CHECK(r2.find("fan_on_hot")->params.at("temp_high") == 25.0);
  CHECK(r2.find("fan_on_hot")->when.text() == rs.find("fan_on_hot")->when.text());
  CHECK(r2.find("calm_music")->cooldown_s == 600);
}

TEST_CASE("scripted trace matches the golden command log") {
  auto trace = load_scripted_trace(test::data_dir() / "level3_trace.jsonl");
  REQUIRE(trace.windows.size() == 40);
  auto rs = default_rules();
  auto cmds = replay(rs, trace, trace.resident);
  CHECK(dump_lines(cmds) == read_text_file(test::data_dir() / "level3_golden.jsonl"));

  // The trace is self-consistent and replays identically.
  Engine engine(apply_overrides(rs, trace.resident), trace.resident, trace.devices);
  std::vector<TraceEntry> entries;
  for (const auto& w : trace.windows) entries.push_back(engine.step(w));
  CHECK(check_trace(entries, rs, trace.device_names()).empty());
  std::vector<ActuatorCommand> from_trace;
  for (const auto& e : entries) {
    auto back = trace_from_json(json::parse(to_json(e).dump()));
    CHECK(to_json(back) == to_json(e));
    for (const auto& c : back.commands) from_trace.push_back(c);
  }
  CHECK(dump_lines(from_trace) == dump_lines(cmds));

  // Commands close the loop: the stove reads off while its observed state lags.
  CHECK(entries[8].effective_devices.at("stove") == "off");
  CHECK(trace.windows[8].devices.at("stove") == "on");
  // calm_music re-arms inside its cooldown at 60 s.
  CHECK(entries[23].rules[6].suppressed == Suppression::cooldown);
}

TEST_CASE("overridden threshold moves fan firings where predicted") {
  auto trace = load_scripted_trace(test::data_dir() / "level3_trace.jsonl");
  auto text = read_text_file(test::data_dir() / "default.shr");
  auto doc = json::parse(text);
  doc["overrides"]["r3"] = {{"fan_on_hot", {{"temp_high", 22.5}}}};
  auto rs = parse_rules(doc.dump(), kDevices);

  auto base = replay(rs, trace, "r1");
  auto over = replay(rs, trace, "r3");
  auto key = [](const ActuatorCommand& c) { return std::to_string(c.issue_ts) + " " + c.cause + " " + c.action; };
  std::set<std::string> a, b;
  for (const auto& c : base) a.insert(key(c));
  for (const auto& c : over) b.insert(key(c));
  std::vector<std::string> only_base, only_over;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_base));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(only_over));
  // 23.0 C exceeds 22.5 from the first window: fan on at 5 s. The commanded
  // fan then reads on at 23.0 C, so fan_off_cool fires at 10 s and its
  // cooldown swallows the 65 s firing. The 25.0 C tail re-arms fan_on_hot.
  CHECK(only_base == std::vector<std::string>{"45000000000 fan_on_hot on", "65000000000 fan_off_cool off"});
  CHECK(only_over == std::vector<std::string>{"10000000000 fan_off_cool off", "5000000000 fan_on_hot on",
                                              "70000000000 fan_on_hot on"});
}

TEST_CASE("engine rejects out of order windows") {
  Engine engine(default_rules(), "r1");
  engine.step(window(10, "idle"));
  CHECK(test::error_code_of([&] { engine.step(window(10, "idle")); }) == Errc::order_violation);
}

TEST_CASE("random traces obey hold, cooldown and safety") {
  std::mt19937_64 rng(11);
  const std::vector<std::string> acts = {"idle", "cooking", "sleeping", "walking", "drinking"};
  const std::vector<std::string> emos = {"neutral", "angry", "sad", "happy"};
  auto rs = default_rules();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<WindowState> ws;
    for (int k = 1; k <= 80; ++k) {
      WindowState w;
      w.ts = k * 2500 * kNanosPerMilli;
      w.activity = acts[rng() % acts.size()];
      w.emotion = emos[rng() % emos.size()];
      w.temperature_c = 22.0 + static_cast<double>(rng() % 60) / 10.0;
      w.time_of_day_s = static_cast<double>(rng() % 86400);
      for (const auto& d : kDevices) w.devices[d] = rng() % 3 == 0 ? "on" : "off";
      ws.push_back(w);
    }
    Engine e1(rs, "r1"), e2(rs, "r1");
    std::vector<TraceEntry> t1;
    std::string c1, c2;
    for (const auto& w : ws) {
      t1.push_back(e1.step(w));
      c1 += dump_lines(t1.back().commands);
      c2 += dump_lines(e2.step(w).commands);
    }
    CHECK(c1 == c2);
    auto issues = check_trace(t1, rs, kDevices);
    CHECK_MESSAGE(issues.empty(), (issues.empty() ? "" : issues.front()));
  }
}

TEST_CASE("check_trace flags violations") {
  auto rs = default_rules();
  TraceEntry t;
  t.ts = 5;
  t.rules.push_back({"stove_off", true, 1, false, Suppression::none, false});
  t.commands.push_back({"stove", 101, "off", 5, "stove_off", "r1"});
  t.commands.push_back({"toaster", std::nullopt, "off", 5, "stove_off", "r1"});
  auto issues = check_trace({t}, rs, kDevices);
  CHECK(issues.size() == 4);  // hold twice, undeclared device, cooldown on the second
}
