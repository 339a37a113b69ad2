#pragma once

// Scores a fused run against the scenario's ground-truth export. Every metric
// is recomputed from files in the fused directory.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shf/common.hpp"

namespace shf::eval {

/// Ground truth is exported every 100 ms.
constexpr Nanos kTruthPeriodNs = 100 * kNanosPerMilli;

struct TruthTick {
  Nanos t = 0;  // scenario time (reference minus the run's base)
  bool anyone_present = false;
  std::string activity;  // first resident
  std::string emotion;
  bool present = false;  // first resident
  double x = 0, y = 0;
};

std::vector<TruthTick> load_truth(const std::filesystem::path& path);

/// Index of the truth tick covering scenario time `t` (a 1 ms guard absorbs
/// rounding); clamped to the export.
std::size_t truth_index(Nanos t, std::size_t ticks);

using Confusion = std::map<std::string, std::map<std::string, std::uint64_t>>;

struct FilterScore {
  std::uint64_t records = 0;
  std::uint64_t dropped = 0;
  std::uint64_t truly_absent = 0;
  std::uint64_t true_drops = 0;
  double dropped_fraction = 0;
  double absent_fraction = 0;
  double precision = 1.0;  // 1 when nothing was dropped
  double recall = 1.0;     // 1 when nobody was ever absent
};

struct LabelScore {
  std::uint64_t frames = 0;
  std::uint64_t correct = 0;
  double accuracy = 0;
  Confusion confusion;  // truth -> predicted -> frames
};

struct DecisionScore {
  std::uint64_t commands = 0;
  std::map<std::string, std::uint64_t> by_rule;
  std::optional<bool> golden_match;
  std::vector<std::string> missing;  // in golden, not emitted
  std::vector<std::string> extra;    // emitted, not in golden
};

struct EvalReport {
  std::string run_id;
  std::string config_hash;
  FilterScore filter;
  LabelScore activity;
  LabelScore emotion;
  DecisionScore decision;
  std::map<std::string, double> reduction;
  std::map<std::string, std::uint64_t> counters;
  std::string coverage_text;  // coverage.json as stored
};

struct EvalOptions {
  std::optional<std::filesystem::path> golden;  // expected commands.jsonl
};

/// Throws missing_input when a required artifact is absent.
EvalReport evaluate(const std::filesystem::path& fused_dir, const std::filesystem::path& truth_path,
                    const EvalOptions& options = {});

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const FilterScore& s);
nlohmann::json to_json(const LabelScore& s);

}  // namespace shf::eval
