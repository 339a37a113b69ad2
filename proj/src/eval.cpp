#include "shf/eval.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "shf/pipeline.hpp"
#include "shf/state.hpp"
#include "shf/taxonomy.hpp"

namespace shf::eval {

using nlohmann::json;

std::vector<TruthTick> load_truth(const std::filesystem::path& path) {
  std::vector<TruthTick> out;
  for (const auto& j : pipeline::read_jsonl(path)) {
    try {
      TruthTick t;
      t.t = j.at("t").get<Nanos>();
      const auto& rs = j.at("residents");
      for (const auto& r : rs) t.anyone_present = t.anyone_present || r.at("present").get<bool>();
      if (!rs.empty()) {
        const auto& r = rs.at(0);
        t.present = r.at("present").get<bool>();
        t.activity = r.at("activity").get<std::string>();
        t.emotion = r.at("emotion").get<std::string>();
        t.x = r.at("x").get<double>();
        t.y = r.at("y").get<double>();
      }
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, path.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw Error(Errc::missing_input, path.string() + " holds no truth ticks");
  return out;
}

std::size_t truth_index(Nanos t, std::size_t ticks) {
  if (ticks == 0) throw Error(Errc::out_of_range, "no truth ticks");
  Nanos i = (t + kNanosPerMilli) / kTruthPeriodNs;
  if (t + kNanosPerMilli < 0) i = 0;
  return static_cast<std::size_t>(std::clamp<Nanos>(i, 0, static_cast<Nanos>(ticks) - 1));
}

namespace {

std::string command_key(const json& c) {
  return std::to_string(c.at("issue_ts").get<Nanos>()) + " " + c.at("device").get<std::string>() + " " +
         c.at("action").get<std::string>() + " " + c.at("cause").get<std::string>();
}

void finish(LabelScore& s) {
  s.accuracy = s.frames ? static_cast<double>(s.correct) / static_cast<double>(s.frames) : 0.0;
}

}  // namespace

EvalReport evaluate(const std::filesystem::path& fused_dir, const std::filesystem::path& truth_path,
                    const EvalOptions& options) {
  pipeline::OutputLayout out{fused_dir};
  EvalReport r;
  auto manifest = pipeline::read_json(out.manifest());
  r.run_id = manifest.at("run_id").get<std::string>();
  r.config_hash = manifest.at("config_hash").get<std::string>();
  auto streams = pipeline::read_json(out.streams());
  const Nanos base = streams.at("home").at("reference_base_ns").get<Nanos>();
  auto truth = load_truth(truth_path);
  r.coverage_text = read_text_file(out.coverage());
  auto coverage = json::parse(r.coverage_text);

  // Cleaning: a drop is a positive, an empty home is the truth.
  auto level1 = pipeline::read_jsonl(out.level1());
  auto& f = r.filter;
  for (const auto& j : level1) {
    const Nanos ts = j.at("ts").get<Nanos>();
    const bool dropped = !j.at("kept").get<bool>();
    const bool absent = !truth[truth_index(ts - base, truth.size())].anyone_present;
    ++f.records;
    f.dropped += dropped;
    f.truly_absent += absent;
    f.true_drops += dropped && absent;
  }
  if (f.records) {
    f.dropped_fraction = static_cast<double>(f.dropped) / static_cast<double>(f.records);
    f.absent_fraction = static_cast<double>(f.truly_absent) / static_cast<double>(f.records);
  }
  if (f.dropped) f.precision = static_cast<double>(f.true_drops) / static_cast<double>(f.dropped);
  if (f.truly_absent) f.recall = static_cast<double>(f.true_drops) / static_cast<double>(f.truly_absent);

  // Recognition: every truth tick with the resident at home, scored against
  // the window whose center is nearest.
  std::vector<Nanos> centers;
  std::vector<state::WindowLabels> labels;
  if (std::filesystem::exists(out.labels())) {
    for (const auto& j : pipeline::read_jsonl(out.labels())) {
      labels.push_back(state::labels_from_json(j));
      const auto& a = labels.back().activity;
      centers.push_back(a.start + (a.end - a.start) / 2);
    }
  }
  const auto activities = default_activity_taxonomy();
  const auto emotions = default_emotion_taxonomy();
  if (!labels.empty()) {
    for (const auto& t : truth) {
      if (!t.present) continue;
      auto w = state::nearest_window(centers, base + t.t);
      if (!w) continue;
      const auto& l = labels[*w];
      if (activities.contains(t.activity)) {
        ++r.activity.frames;
        r.activity.correct += l.activity.label == t.activity;
        ++r.activity.confusion[t.activity][l.activity.label];
      }
      if (emotions.contains(t.emotion)) {
        ++r.emotion.frames;
        r.emotion.correct += l.emotion.label == t.emotion;
        ++r.emotion.confusion[t.emotion][l.emotion.label];
      }
    }
  }
  finish(r.activity);
  finish(r.emotion);

  // Decisions.
  std::vector<json> commands;
  if (std::filesystem::exists(out.commands())) commands = pipeline::read_jsonl(out.commands());
  r.decision.commands = commands.size();
  for (const auto& c : commands) ++r.decision.by_rule[c.at("cause").get<std::string>()];
  if (options.golden) {
    std::multiset<std::string> have, want;
    for (const auto& c : commands) have.insert(command_key(c));
    for (const auto& c : pipeline::read_jsonl(*options.golden)) want.insert(command_key(c));
    std::set_difference(want.begin(), want.end(), have.begin(), have.end(), std::back_inserter(r.decision.missing));
    std::set_difference(have.begin(), have.end(), want.begin(), want.end(), std::back_inserter(r.decision.extra));
    r.decision.golden_match = r.decision.missing.empty() && r.decision.extra.empty();
  }

  // Counters and data reduction through the ladder.
  const auto input_samples = coverage.at("input_samples").get<std::uint64_t>();
  const auto records = coverage.at("records").get<std::uint64_t>();
  std::uint64_t kept = f.records - f.dropped;
  std::uint64_t windows = labels.size();
  r.counters["input_samples"] = input_samples;
  r.counters["aligned_records"] = records;
  r.counters["kept_records"] = kept;
  r.counters["dropped_records"] = f.dropped;
  r.counters["windows"] = windows;
  r.counters["commands"] = commands.size();
  r.counters["log_records"] = manifest.at("log").at("records").get<std::uint64_t>();
  r.counters["log_undecodable"] = manifest.at("log").at("undecodable").get<std::uint64_t>();
  if (std::filesystem::exists(out.collector_counters())) {
    const auto collector = pipeline::read_json(out.collector_counters());
    for (const auto& [k, v] : collector.items()) {
      if (v.is_number_unsigned()) r.counters["collector_" + k] = v.get<std::uint64_t>();
    }
  }
  auto ratio = [](std::uint64_t a, std::uint64_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  r.reduction["records_per_sample"] = ratio(records, input_samples);
  r.reduction["kept_per_record"] = ratio(kept, records);
  r.reduction["windows_per_kept"] = ratio(windows, kept);
  r.reduction["commands_per_window"] = ratio(commands.size(), windows);
  r.reduction["windows_per_sample"] = ratio(windows, input_samples);
  return r;
}

json to_json(const FilterScore& s) {
  return {{"records", s.records},
          {"dropped", s.dropped},
          {"truly_absent", s.truly_absent},
          {"true_drops", s.true_drops},
          {"dropped_fraction", s.dropped_fraction},
          {"absent_fraction", s.absent_fraction},
          {"precision", s.precision},
          {"recall", s.recall}};
}

json to_json(const LabelScore& s) {
  return {{"frames", s.frames}, {"correct", s.correct}, {"accuracy", s.accuracy}, {"confusion", s.confusion}};
}

json to_json(const EvalReport& r) {
  json decision = {{"commands", r.decision.commands}, {"by_rule", r.decision.by_rule}};
  if (r.decision.golden_match) {
    decision["golden"] = {{"match", *r.decision.golden_match},
                          {"missing", r.decision.missing},
                          {"extra", r.decision.extra}};
  } else {
    decision["golden"] = nullptr;
  }
  auto coverage = json::parse(r.coverage_text);
  return {{"schema", "shfe/1"},
          {"run_id", r.run_id},
          {"config_hash", r.config_hash},
          {"alignment", coverage},
          {"filter", to_json(r.filter)},
          {"activity", to_json(r.activity)},
          {"emotion", to_json(r.emotion)},
          {"decision", decision},
          {"counters", r.counters},
          {"reduction", r.reduction}};
}

}  // namespace shf::eval
