#pragma once

// Level 3: declarative rules over labelled windows that emit actuator
// commands, with hold and cooldown discipline and per-resident overrides.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shf/common.hpp"
#include "shf/predicate.hpp"

namespace shf::decision {

inline constexpr std::string_view kRulesSchema = "shr/1";

struct Command {
  std::string device;
  std::string action;
};

struct Rule {
  std::string id;
  std::string when_text;
  predicate::Predicate when;
  Command command;
  int hold_windows = 2;
  double cooldown_s = 60.0;
  int priority = 0;
  std::map<std::string, double, std::less<>> params;
};

/// resident -> rule id -> parameter -> value
using Overrides = std::map<std::string, std::map<std::string, std::map<std::string, double>>>;

struct RuleSet {
  std::vector<Rule> rules;
  Overrides overrides;
  std::uint64_t hash = 0;
  const Rule* find(std::string_view id) const;
};

/// Fields Level 3 predicates may reference.
predicate::Schema decision_schema(const std::vector<std::string>& devices);

/// Empty or whitespace-only text is an empty ruleset. Throws parse_error,
/// unknown_field, duplicate_rule_id, unknown_device, unknown_parameter or
/// validation_error.
RuleSet parse_rules(std::string_view text, const std::vector<std::string>& devices);
RuleSet load_rules(const std::filesystem::path& path, const std::vector<std::string>& devices);

/// Substitutes the resident's parameter overrides. cooldown_s, hold_windows,
/// priority and predicate $params are overridable. Throws unknown_parameter.
RuleSet apply_overrides(const RuleSet& rules, const std::string& resident);

/// Everything a rule can see about one window.
struct WindowState {
  Nanos ts = 0;  // decision time, the window end
  std::string activity = "idle";
  std::string emotion = "neutral";
  double activity_confidence = 0.0;
  double emotion_confidence = 0.0;
  std::optional<double> temperature_c;
  std::optional<double> humidity_rh;
  double time_of_day_s = 0.0;
  bool night = false;
  double occupancy_fraction = 0.0;
  std::map<std::string, std::string> devices;  // observed
};

nlohmann::json to_json(const WindowState& w);
WindowState window_state_from_json(const nlohmann::json& j);

struct ActuatorCommand {
  std::string device;
  std::optional<DeviceId> device_id;
  std::string action;
  Nanos issue_ts = 0;
  std::string cause;
  std::string resident;
};

nlohmann::json to_json(const ActuatorCommand& c);
ActuatorCommand command_from_json(const nlohmann::json& j);

enum class Suppression { none, cooldown, priority };
std::string_view suppression_name(Suppression s);

struct RuleEvaluation {
  std::string rule_id;
  bool value = false;
  int counter = 0;
  bool candidate = false;
  Suppression suppressed = Suppression::none;
  bool fired = false;
};

struct TraceEntry {
  Nanos ts = 0;
  std::map<std::string, std::string> effective_devices;
  std::vector<RuleEvaluation> rules;  // in rule order
  std::vector<ActuatorCommand> commands;
};

nlohmann::json to_json(const TraceEntry& t);
TraceEntry trace_from_json(const nlohmann::json& j);

/// Per-rule state carried between windows.
struct RuleCounters {
  std::vector<int> hold;
  std::vector<std::optional<Nanos>> last_fired;
};

struct Candidates {
  std::vector<RuleEvaluation> evaluations;
  RuleCounters counters;  // updated hold counters
};

/// Pure: evaluates every rule against the effective device states.
Candidates evaluate(const RuleSet& rules, const WindowState& w, const std::map<std::string, std::string>& devices,
                    const RuleCounters& counters);

/// At most one command per device: highest priority, then smallest rule id.
/// Marks winners fired and losers suppressed; returns commands in rule order.
std::vector<ActuatorCommand> arbitrate(const RuleSet& rules, std::vector<RuleEvaluation>& evaluations,
                                       const WindowState& w, const std::string& resident);

/// Sequential fold over windows. Commands change a device's effective state
/// from the next window until its observed state changes.
class Engine {
 public:
  Engine(RuleSet rules, std::string resident, std::map<std::string, DeviceId> device_ids = {});
  TraceEntry step(const WindowState& w);
  const RuleSet& rules() const { return rules_; }

 private:
  struct Commanded {
    std::string state;
    std::optional<std::string> observed_at_command;
  };
  RuleSet rules_;
  std::string resident_;
  std::map<std::string, DeviceId> device_ids_;
  RuleCounters counters_;
  std::map<std::string, Commanded> commanded_;
  std::map<std::string, std::string> pending_;  // device -> state, applied next window
  std::optional<Nanos> last_ts_;
};

/// Line-delimited window states after a header line naming the resident and
/// the device ids.
struct ScriptedTrace {
  std::string resident;
  std::map<std::string, DeviceId> devices;
  std::vector<WindowState> windows;
  std::vector<std::string> device_names() const;
};

ScriptedTrace load_scripted_trace(const std::filesystem::path& path);

/// Hold, cooldown, safety and one-command-per-device violations in a trace;
/// empty when the trace is consistent with the rules.
std::vector<std::string> check_trace(const std::vector<TraceEntry>& trace, const RuleSet& rules,
                                     const std::vector<std::string>& devices);

}  // namespace shf::decision
