#include "shf/decision.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "shf/sensors.hpp"
#include "shf/state.hpp"

namespace shf::decision {

using nlohmann::json;

const Rule* RuleSet::find(std::string_view id) const {
  for (const auto& r : rules) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

predicate::Schema decision_schema(const std::vector<std::string>& devices) {
  using predicate::Type;
  predicate::Schema s;
  s.fields = {{"activity", Type::string},
              {"emotion", Type::string},
              {"activity_confidence", Type::number},
              {"emotion_confidence", Type::number},
              {"temperature", Type::number},
              {"humidity", Type::number},
              {"time_of_day", Type::number},
              {"night", Type::boolean},
              {"occupancy_fraction", Type::number}};
  s.devices = devices;
  return s;
}

namespace {

void only_keys(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::parse_error, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw Error(Errc::unknown_field, where + " has unknown key '" + k + "'");
    }
  }
}

void validate_rule(const Rule& r) {
  if (r.hold_windows < 1) throw Error(Errc::validation_error, "rule '" + r.id + "': hold_windows must be >= 1");
  if (!(r.cooldown_s >= 0) || !std::isfinite(r.cooldown_s)) {
    throw Error(Errc::validation_error, "rule '" + r.id + "': cooldown_s must be >= 0");
  }
}

Rule parse_rule(const json& j, const std::vector<std::string>& devices) {
  only_keys(j, {"id", "when", "command", "hold_windows", "cooldown_s", "priority", "params"}, "rule");
  Rule r;
  try {
    r.id = j.at("id").get<std::string>();
    r.when_text = j.at("when").get<std::string>();
    const auto& cmd = j.at("command");
    only_keys(cmd, {"device", "action"}, "rule '" + r.id + "' command");
    r.command.device = cmd.at("device").get<std::string>();
    r.command.action = cmd.at("action").get<std::string>();
    r.hold_windows = j.value("hold_windows", 2);
    r.cooldown_s = j.value("cooldown_s", 60.0);
    r.priority = j.value("priority", 0);
    if (j.contains("params")) {
      for (const auto& [k, v] : j.at("params").items()) r.params[k] = v.get<double>();
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, "rule: " + std::string(e.what()));
  }
  if (r.id.empty()) throw Error(Errc::parse_error, "rule id must not be empty");
  if (std::find(devices.begin(), devices.end(), r.command.device) == devices.end()) {
    throw Error(Errc::unknown_device, "rule '" + r.id + "' commands unknown device '" + r.command.device + "'");
  }
  if (r.command.action.empty()) throw Error(Errc::parse_error, "rule '" + r.id + "' has an empty action");
  validate_rule(r);
  auto schema = decision_schema(devices);
  schema.params = r.params;
  try {
    r.when = predicate::Predicate::compile(r.when_text, schema);
  } catch (const Error& e) {
    throw Error(e.code(), "rule '" + r.id + "': " + e.what());
  }
  return r;
}

bool blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
}

void apply_one(Rule& r, const std::string& param, double value) {
  if (param == "cooldown_s") {
    r.cooldown_s = value;
  } else if (param == "hold_windows") {
    if (value != std::floor(value)) throw Error(Errc::validation_error, "hold_windows must be an integer");
    r.hold_windows = static_cast<int>(value);
  } else if (param == "priority") {
    if (value != std::floor(value)) throw Error(Errc::validation_error, "priority must be an integer");
    r.priority = static_cast<int>(value);
  } else if (auto it = r.params.find(param); it != r.params.end()) {
    it->second = value;
  } else {
    throw Error(Errc::unknown_parameter, "rule '" + r.id + "' has no parameter '" + param + "'");
  }
  validate_rule(r);
}

}  // namespace

RuleSet parse_rules(std::string_view text, const std::vector<std::string>& devices) {
  RuleSet rs;
  rs.hash = sensors::fnv1a64(text);
  if (blank(text)) return rs;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("rules: ") + e.what());
  }
  only_keys(doc, {"schema", "rules", "overrides"}, "rules");
  if (doc.value("schema", "") != kRulesSchema) {
    throw Error(Errc::parse_error, "rules schema must be " + std::string(kRulesSchema));
  }
  std::set<std::string> ids;
  if (doc.contains("rules")) {
    if (!doc["rules"].is_array()) throw Error(Errc::parse_error, "rules must be an array");
    for (const auto& j : doc["rules"]) {
      auto r = parse_rule(j, devices);
      if (!ids.insert(r.id).second) throw Error(Errc::duplicate_rule_id, "rule id '" + r.id + "' repeats");
      rs.rules.push_back(std::move(r));
    }
  }
  if (doc.contains("overrides")) {
    try {
      rs.overrides = doc["overrides"].get<Overrides>();
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, std::string("overrides: ") + e.what());
    }
    // Every override must name a real rule and parameter.
    for (const auto& [resident, per_rule] : rs.overrides) apply_overrides(rs, resident);
  }
  return rs;
}

RuleSet load_rules(const std::filesystem::path& path, const std::vector<std::string>& devices) {
  return parse_rules(read_text_file(path), devices);
}

RuleSet apply_overrides(const RuleSet& rules, const std::string& resident) {
  RuleSet out = rules;
  auto it = rules.overrides.find(resident);
  if (it == rules.overrides.end()) return out;
  for (const auto& [rule_id, params] : it->second) {
    auto r = std::find_if(out.rules.begin(), out.rules.end(), [&](const Rule& x) { return x.id == rule_id; });
    if (r == out.rules.end()) {
      throw Error(Errc::unknown_parameter, "override for resident '" + resident + "' names unknown rule '" + rule_id + "'");
    }
    for (const auto& [param, value] : params) apply_one(*r, param, value);
  }
  return out;
}

// ---- serialization ----

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json to_json(const WindowState& w) {
  return {{"ts", w.ts},
          {"activity", w.activity},
          {"emotion", w.emotion},
          {"activity_confidence", w.activity_confidence},
          {"emotion_confidence", w.emotion_confidence},
          {"temperature", opt(w.temperature_c)},
          {"humidity", opt(w.humidity_rh)},
          {"time_of_day", w.time_of_day_s},
          {"night", w.night},
          {"occupancy_fraction", w.occupancy_fraction},
          {"devices", w.devices}};
}

WindowState window_state_from_json(const json& j) {
  try {
    WindowState w;
    w.ts = j.at("ts").get<Nanos>();
    w.activity = j.at("activity").get<std::string>();
    w.emotion = j.at("emotion").get<std::string>();
    w.activity_confidence = j.value("activity_confidence", 1.0);
    w.emotion_confidence = j.value("emotion_confidence", 1.0);
    w.temperature_c = opt_from(j, "temperature");
    w.humidity_rh = opt_from(j, "humidity");
    w.time_of_day_s = j.at("time_of_day").get<double>();
    w.night = j.contains("night") ? j.at("night").get<bool>() : state::is_night(w.time_of_day_s);
    w.occupancy_fraction = j.value("occupancy_fraction", 0.0);
    if (j.contains("devices")) w.devices = j.at("devices").get<std::map<std::string, std::string>>();
    return w;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("window state: ") + e.what());
  }
}

json to_json(const ActuatorCommand& c) {
  json j = {{"device", c.device},
            {"action", c.action},
            {"issue_ts", c.issue_ts},
            {"cause", c.cause},
            {"resident", c.resident}};
  j["device_id"] = c.device_id ? json(*c.device_id) : json(nullptr);
  return j;
}

ActuatorCommand command_from_json(const json& j) {
  try {
    ActuatorCommand c;
    c.device = j.at("device").get<std::string>();
    if (j.contains("device_id") && !j.at("device_id").is_null()) c.device_id = j.at("device_id").get<DeviceId>();
    c.action = j.at("action").get<std::string>();
    c.issue_ts = j.at("issue_ts").get<Nanos>();
    c.cause = j.at("cause").get<std::string>();
    c.resident = j.at("resident").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("command: ") + e.what());
  }
}

std::string_view suppression_name(Suppression s) {
  switch (s) {
    case Suppression::none: return "none";
    case Suppression::cooldown: return "cooldown";
    case Suppression::priority: return "priority";
  }
  return "none";
}

namespace {

Suppression parse_suppression(const std::string& s) {
  if (s == "none") return Suppression::none;
  if (s == "cooldown") return Suppression::cooldown;
  if (s == "priority") return Suppression::priority;
  throw Error(Errc::parse_error, "unknown suppression '" + s + "'");
}

}  // namespace

json to_json(const TraceEntry& t) {
  json rules = json::array();
  for (const auto& e : t.rules) {
    rules.push_back({{"rule_id", e.rule_id},
                     {"value", e.value},
                     {"counter", e.counter},
                     {"candidate", e.candidate},
                     {"suppressed", suppression_name(e.suppressed)},
                     {"fired", e.fired}});
  }
  json cmds = json::array();
  for (const auto& c : t.commands) cmds.push_back(to_json(c));
  return {{"ts", t.ts}, {"devices", t.effective_devices}, {"rules", rules}, {"commands", cmds}};
}

TraceEntry trace_from_json(const json& j) {
  try {
    TraceEntry t;
    t.ts = j.at("ts").get<Nanos>();
    t.effective_devices = j.at("devices").get<std::map<std::string, std::string>>();
    for (const auto& e : j.at("rules")) {
      t.rules.push_back({e.at("rule_id").get<std::string>(), e.at("value").get<bool>(), e.at("counter").get<int>(),
                         e.at("candidate").get<bool>(), parse_suppression(e.at("suppressed").get<std::string>()),
                         e.at("fired").get<bool>()});
    }
    for (const auto& c : j.at("commands")) t.commands.push_back(command_from_json(c));
    return t;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("trace: ") + e.what());
  }
}

// ---- evaluation ----

namespace {

predicate::MapContext context_for(const WindowState& w, const std::map<std::string, std::string>& devices) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  predicate::MapContext ctx;
  ctx.fields = {{"activity", w.activity},
                {"emotion", w.emotion},
                {"activity_confidence", w.activity_confidence},
                {"emotion_confidence", w.emotion_confidence},
                {"temperature", w.temperature_c.value_or(nan)},
                {"humidity", w.humidity_rh.value_or(nan)},
                {"time_of_day", w.time_of_day_s},
                {"night", w.night},
                {"occupancy_fraction", w.occupancy_fraction}};
  for (const auto& [k, v] : devices) ctx.devices.emplace(k, v);
  return ctx;
}

bool cooled_down(const Rule& r, const std::optional<Nanos>& last_fired, Nanos now) {
  if (!last_fired) return true;
  return static_cast<double>(now - *last_fired) >= r.cooldown_s * static_cast<double>(kNanosPerSecond);
}

}  // namespace

Candidates evaluate(const RuleSet& rules, const WindowState& w, const std::map<std::string, std::string>& devices,
                    const RuleCounters& counters) {
  Candidates out;
  out.counters = counters;
  out.counters.hold.resize(rules.rules.size(), 0);
  out.counters.last_fired.resize(rules.rules.size());
  auto ctx = context_for(w, devices);
  for (std::size_t i = 0; i < rules.rules.size(); ++i) {
    const auto& r = rules.rules[i];
    RuleEvaluation e;
    e.rule_id = r.id;
    e.value = r.when.evaluate(ctx, r.params).value;
    int& counter = out.counters.hold[i];
    counter = e.value ? counter + 1 : 0;
    e.counter = counter;
    if (counter >= r.hold_windows) {
      if (cooled_down(r, out.counters.last_fired[i], w.ts)) {
        e.candidate = true;
      } else {
        e.suppressed = Suppression::cooldown;
      }
    }
    out.evaluations.push_back(std::move(e));
  }
  return out;
}

std::vector<ActuatorCommand> arbitrate(const RuleSet& rules, std::vector<RuleEvaluation>& evaluations,
                                       const WindowState& w, const std::string& resident) {
  std::map<std::string, std::size_t> winner;  // device -> rule index
  for (std::size_t i = 0; i < evaluations.size(); ++i) {
    if (!evaluations[i].candidate) continue;
    const auto& r = rules.rules[i];
    auto [it, fresh] = winner.emplace(r.command.device, i);
    if (fresh) continue;
    const auto& cur = rules.rules[it->second];
    if (r.priority > cur.priority || (r.priority == cur.priority && r.id < cur.id)) it->second = i;
  }
  std::vector<ActuatorCommand> out;
  for (std::size_t i = 0; i < evaluations.size(); ++i) {
    if (!evaluations[i].candidate) continue;
    const auto& r = rules.rules[i];
    if (winner.at(r.command.device) != i) {
      evaluations[i].suppressed = Suppression::priority;
      continue;
    }
    evaluations[i].fired = true;
    out.push_back({r.command.device, std::nullopt, r.command.action, w.ts, r.id, resident});
  }
  return out;
}

Engine::Engine(RuleSet rules, std::string resident, std::map<std::string, DeviceId> device_ids)
    : rules_(std::move(rules)), resident_(std::move(resident)), device_ids_(std::move(device_ids)) {
  counters_.hold.assign(rules_.rules.size(), 0);
  counters_.last_fired.assign(rules_.rules.size(), std::nullopt);
}

TraceEntry Engine::step(const WindowState& w) {
  if (last_ts_ && w.ts <= *last_ts_) throw Error(Errc::order_violation, "window states must be strictly increasing");
  last_ts_ = w.ts;

  // Commands issued last window take effect now.
  for (auto& [device, st] : pending_) {
    std::optional<std::string> observed;
    if (auto it = w.devices.find(device); it != w.devices.end()) observed = it->second;
    commanded_[device] = {st, observed};
  }
  pending_.clear();

  TraceEntry t;
  t.ts = w.ts;
  t.effective_devices = w.devices;
  for (auto it = commanded_.begin(); it != commanded_.end();) {
    std::optional<std::string> observed;
    if (auto o = w.devices.find(it->first); o != w.devices.end()) observed = o->second;
    if (observed != it->second.observed_at_command) {
      it = commanded_.erase(it);  // the world moved on
      continue;
    }
    t.effective_devices[it->first] = it->second.state;
    ++it;
  }

  auto cand = evaluate(rules_, w, t.effective_devices, counters_);
  counters_ = std::move(cand.counters);
  t.commands = arbitrate(rules_, cand.evaluations, w, resident_);
  for (std::size_t i = 0; i < cand.evaluations.size(); ++i) {
    if (cand.evaluations[i].fired) counters_.last_fired[i] = w.ts;
  }
  for (auto& c : t.commands) {
    if (auto it = device_ids_.find(c.device); it != device_ids_.end()) c.device_id = it->second;
    pending_[c.device] = c.action;
  }
  t.rules = std::move(cand.evaluations);
  return t;
}

std::vector<std::string> ScriptedTrace::device_names() const {
  std::vector<std::string> out;
  for (const auto& [name, id] : devices) out.push_back(name);
  return out;
}

ScriptedTrace load_scripted_trace(const std::filesystem::path& path) {
  auto text = read_text_file(path);
  ScriptedTrace out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    if (blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, path.string() + ": " + e.what());
    }
    if (header) {
      header = false;
      try {
        out.resident = j.at("resident").get<std::string>();
        out.devices = j.at("devices").get<std::map<std::string, DeviceId>>();
      } catch (const json::exception& e) {
        throw Error(Errc::parse_error, path.string() + " header: " + e.what());
      }
      continue;
    }
    out.windows.push_back(window_state_from_json(j));
  }
  if (header) throw Error(Errc::parse_error, path.string() + " has no header line");
  return out;
}

std::vector<std::string> check_trace(const std::vector<TraceEntry>& trace, const RuleSet& rules,
                                     const std::vector<std::string>& devices) {
  std::vector<std::string> issues;
  std::vector<int> run(rules.rules.size(), 0);
  std::vector<std::optional<Nanos>> last(rules.rules.size());
  auto index_of = [&](const std::string& id) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < rules.rules.size(); ++i) {
      if (rules.rules[i].id == id) return i;
    }
    return std::nullopt;
  };
  for (const auto& t : trace) {
    for (const auto& e : t.rules) {
      if (auto i = index_of(e.rule_id)) run[*i] = e.value ? run[*i] + 1 : 0;
    }
    std::set<std::string> targeted;
    for (const auto& c : t.commands) {
      auto at = std::to_string(t.ts);
      if (std::find(devices.begin(), devices.end(), c.device) == devices.end()) {
        issues.push_back(at + ": command targets undeclared device '" + c.device + "'");
      }
      if (!targeted.insert(c.device).second) issues.push_back(at + ": two commands for '" + c.device + "'");
      auto i = index_of(c.cause);
      if (!i) {
        issues.push_back(at + ": command cause '" + c.cause + "' is not a rule");
        continue;
      }
      const auto& r = rules.rules[*i];
      if (run[*i] < r.hold_windows) {
        issues.push_back(at + ": '" + r.id + "' fired after " + std::to_string(run[*i]) + " true windows");
      }
      if (last[*i] && !cooled_down(r, last[*i], t.ts)) {
        issues.push_back(at + ": '" + r.id + "' fired inside its cooldown");
      }
      last[*i] = t.ts;
    }
  }
  return issues;
}

}  // namespace shf::decision
