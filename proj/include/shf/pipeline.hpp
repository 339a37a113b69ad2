#pragma once

// The fusion ladder over a stored log: Level 0 alignment, Level 1 cleaning
// and features, Level 2 windows and labels, Level 3 decisions. Each level
// reads only the previous level's persisted output plus raw log references.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shf/align.hpp"
#include "shf/features.hpp"
#include "shf/scenario.hpp"
#include "shf/state.hpp"
#include "shf/timebase.hpp"

namespace shf::pipeline {

inline constexpr std::string_view kConfigSchema = "shfc/1";

struct FuseConfig {
  align::AlignConfig align;
  struct Level1 {
    double force_threshold = features::kDefaultForceThreshold;
    features::VoiceConfig voice;
    features::SkeletonConfig skeleton;
    features::TrackerConfig tracker;
  } level1;
  struct Level2 {
    Nanos window_ns = 5 * kNanosPerSecond;
    Nanos stride_ns = 2500 * kNanosPerMilli;
    features::GaitConfig gait;
    int min_dwell = 2;
    std::string rules = "level2.rules";
  } level2;
  struct Level3 {
    std::string rules = "default.shr";
  } level3;
  int passes = 1;
  std::uint64_t seed = 0;
  /// Rule paths resolve against this directory.
  std::filesystem::path base_dir;

  void validate() const;
  std::filesystem::path level2_rules_path() const { return base_dir / level2.rules; }
  std::filesystem::path level3_rules_path() const { return base_dir / level3.rules; }
};

/// Every effective parameter, in a canonical order (base_dir excluded).
nlohmann::json to_json(const FuseConfig& c);
/// All keys optional apart from "schema"; unknown keys throw unknown_field.
FuseConfig parse_fuse_config(std::string_view text, const std::filesystem::path& base_dir);
FuseConfig load_fuse_config(const std::filesystem::path& path);
/// FNV-1a over the canonical config and both rule files' bytes.
std::uint64_t config_hash(const FuseConfig& c);
std::string hex64(std::uint64_t v);

// ---- log ingestion ----

struct Home {
  double start_time_of_day_s = 0;
  double duration_s = 0;
  Nanos reference_base_ns = 0;
  sensors::RoomBounds room;
  std::vector<sensors::Device> devices;
  std::vector<std::string> residents;
  double heartbeat_interval_s = 1.0;

  std::vector<std::string> device_names() const;
  std::map<std::string, DeviceId> device_ids() const;
  std::optional<std::string> device_name(DeviceId id) const;
};

nlohmann::json to_json(const Home& h);
Home home_from_json(const nlohmann::json& j);

enum class MappingKind { fitted, offset_only, identity };
std::string_view mapping_kind_name(MappingKind k);

struct DeviceLog {
  sensors::SensorSpec spec;
  std::string hello;  // descriptor text as carried in HELLO
  std::vector<align::StreamSample> samples;
  std::vector<timebase::SyncRound> rounds;  // t3 is the receive stamp
  std::vector<Nanos> receipts;              // receive stamp of every decoded frame
  timebase::ClockMapping mapping;
  MappingKind mapping_kind = MappingKind::identity;
  int epochs = 0;
};

struct LoadedLog {
  Home home;
  std::map<DeviceId, DeviceLog> devices;
  std::uint64_t records = 0;
  std::uint64_t undecodable = 0;
  std::uint64_t undescribed = 0;  // frames from devices that never sent HELLO
  std::uint64_t content_hash = 0;
  std::vector<storage::CorruptionReport> corruption;
};

/// Rounds whose t0 values are more than `gap` apart start a new epoch.
std::vector<timebase::EpochRound> group_epochs(const std::vector<timebase::SyncRound>& rounds,
                                               Nanos gap = 500 * kNanosPerMilli);

/// A line fit with two or more epochs, the best round's offset with one, and
/// the identity with none.
std::pair<timebase::ClockMapping, MappingKind> fit_device_mapping(const std::vector<timebase::SyncRound>& rounds,
                                                                  int* epochs = nullptr);

/// Throws missing_input when the directory has no segments and
/// validation_error when no device described itself.
LoadedLog load_log(const std::filesystem::path& log_dir);

// ---- stage records ----

/// One Level 1 output line.
struct Level1Record {
  state::FrameFeatures features;
  std::string reason;  // set when dropped
  bool disagreement = false;
  bool relaxed = false;
  std::optional<Eigen::Vector2d> camera_root;
  std::optional<Eigen::Vector2d> floor_centroid;
};

nlohmann::json to_json(const Level1Record& r);
Level1Record level1_from_json(const nlohmann::json& j);

// ---- stages ----

struct OutputLayout {
  std::filesystem::path root;
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path streams() const { return root / "streams.json"; }
  std::filesystem::path mappings() const { return root / "mappings.json"; }
  std::filesystem::path aligned() const { return root / "aligned.jsonl"; }
  std::filesystem::path coverage() const { return root / "coverage.json"; }
  std::filesystem::path receipts() const { return root / "receipts.jsonl"; }
  std::filesystem::path level1() const { return root / "level1.jsonl"; }
  std::filesystem::path level1_summary() const { return root / "level1_summary.json"; }
  std::filesystem::path windows() const { return root / "windows.jsonl"; }
  std::filesystem::path labels() const { return root / "labels.jsonl"; }
  std::filesystem::path commands() const { return root / "commands.jsonl"; }
  std::filesystem::path decision_trace() const { return root / "decision_trace.jsonl"; }
  std::filesystem::path collector_counters() const { return root / "collector_counters.json"; }
  std::filesystem::path transitions() const { return root / "transitions.jsonl"; }
};

struct Level1Summary {
  std::uint64_t records = 0;
  std::uint64_t kept = 0;
  std::uint64_t dropped = 0;
  std::uint64_t relaxed = 0;
  std::uint64_t disagreements = 0;
  std::uint64_t skeletons = 0;
  std::map<std::string, std::uint64_t> reasons;
};

nlohmann::json to_json(const Level1Summary& s);

void run_level0(const LoadedLog& log, const FuseConfig& config, const OutputLayout& out);
/// `relax` marks record times whose drops are lifted (second pass).
Level1Summary run_level1(const std::filesystem::path& log_dir, const FuseConfig& config, const OutputLayout& out,
                         const std::vector<std::pair<Nanos, Nanos>>& relax = {});
void run_level2(const FuseConfig& config, const OutputLayout& out);
void run_level3(const FuseConfig& config, const OutputLayout& out);

/// Intervals of windows whose activity is "sleeping", from labels.jsonl.
std::vector<std::pair<Nanos, Nanos>> sleeping_spans(const OutputLayout& out);

struct FuseResult {
  std::uint64_t config_hash = 0;
  std::string run_id;
  std::vector<Level1Summary> passes;
};

/// Runs levels [first, last]; earlier levels' outputs must already exist in
/// `out_dir` when first > 0 (missing_input otherwise).
FuseResult fuse(const std::filesystem::path& log_dir, const FuseConfig& config, const std::filesystem::path& out_dir,
                int first_level = 0, int last_level = 3);

/// "0..3", "0..1" or a single level "2".
std::pair<int, int> parse_level_range(std::string_view text);

/// Reads a line-delimited JSON file; throws missing_input when absent.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace shf::pipeline
