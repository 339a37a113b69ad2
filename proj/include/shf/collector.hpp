#pragma once

// Collector side of acquisition: the single-threaded ingest core shared by
// offline and live runs, the TCP collector, and the network senders used by
// `simulate --to` and `replay`.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "shf/fleet.hpp"
#include "shf/storage.hpp"
#include "shf/transport.hpp"

namespace shf::collector {

/// Files written under an acquisition output directory.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path log_dir() const { return root / "log"; }
  std::filesystem::path gaps() const { return root / "gaps.jsonl"; }
  std::filesystem::path transitions() const { return root / "transitions.jsonl"; }
  std::filesystem::path counters() const { return root / "counters.json"; }
  std::filesystem::path truth() const { return root / "truth.jsonl"; }
};

/// Decode, session bookkeeping, liveness and persistence for frames that
/// arrive in receive order. Owned by exactly one thread.
class Ingestor {
 public:
  Ingestor(const RunLayout& layout, transport::MonitorConfig monitor = {},
           storage::RotationPolicy rotation = {}, std::uint64_t scenario_hash = 0);
  ~Ingestor();
  Ingestor(const Ingestor&) = delete;
  Ingestor& operator=(const Ingestor&) = delete;

  /// One received frame's bytes stamped with `receive_time`. Undecodable
  /// frames are counted and reported, never stored.
  void on_frame(std::span<const std::uint8_t> bytes, Nanos receive_time);

  /// Frames discarded by a full queue before they reached on_frame.
  void on_backpressure_drop(DeviceId device, std::uint32_t first_seq, std::uint32_t last_seq,
                            std::uint64_t frames, Nanos now);

  /// Runs the liveness monitor at every deadline up to and including `now`.
  void advance(Nanos now);

  /// Advances to `end`, seals the log and writes counters.json.
  void finish(Nanos end);

  transport::Counters& counters() { return counters_; }
  const std::vector<transport::GapReport>& gaps() const { return gaps_; }
  const std::vector<transport::StateTransition>& transitions() const { return transitions_; }
  const transport::SessionTable& sessions() const { return sessions_; }

 private:
  void report(const transport::GapReport& g);
  void transition(const transport::StateTransition& t);

  RunLayout layout_;
  transport::MonitorConfig monitor_;
  transport::SessionTable sessions_;
  storage::LogWriter log_;
  transport::Counters counters_;
  std::vector<transport::GapReport> gaps_;
  std::vector<transport::StateTransition> transitions_;
  std::ofstream gaps_out_;
  std::ofstream transitions_out_;
  Nanos last_receive_ = 0;
  bool finished_ = false;
};

/// Feeds simulated frames (already in arrival order) through `ingestor`,
/// counting link losses and everything emitted.
void ingest_offline(std::span<const fleet::EmittedFrame> frames, Ingestor& ingestor, Nanos end_time);

/// Simulates the whole scenario straight into `layout`: log, gap and
/// transition reports, counters and the ground-truth export.
transport::Counters simulate_offline(const sensors::Scenario& scenario, const RunLayout& layout,
                                     storage::RotationPolicy rotation = {});

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};
/// "host:port" or ":port".
Endpoint parse_endpoint(const std::string& text);

struct CollectorConfig {
  Endpoint listen;
  std::size_t queue_capacity = 4096;  // frames per session
  /// How long a reader waits for queue space before dropping the oldest frame.
  Nanos queue_wait_ns = 2 * kNanosPerSecond;
  /// Stop once every connection has closed and nothing new arrived for this long
  /// (0 = run until stop()).
  Nanos exit_when_idle_ns = 0;
};

/// Reference clock for live runs: CLOCK_REALTIME in nanoseconds.
Nanos wall_clock_ns();

/// TCP collector: one reader thread per connection, bounded per-session
/// queues, and a single writer that drains them in receive-stamp order.
class Collector {
 public:
  Collector(CollectorConfig config, Ingestor& ingestor);
  ~Collector();
  Collector(const Collector&) = delete;
  Collector& operator=(const Collector&) = delete;

  /// Bound port (useful when listening on port 0). Throws bind_failure.
  std::uint16_t port() const;

  /// Blocks until stop() or the idle condition; then finishes the ingestor.
  void run();
  /// Safe from any thread or a signal-driven flag watcher.
  void stop();

  std::uint64_t connections_accepted() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct SendStats {
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_emitted = 0;  // including ones suppressed by link faults
  std::uint64_t bytes_sent = 0;
  double wall_seconds = 0;
};

struct SendOptions {
  Endpoint to;
  /// Pace frames at their send times (scaled by `speed`); otherwise as fast as possible.
  bool realtime = false;
  double speed = 1.0;
};

/// Streams every device's frames over its own TCP connection. In realtime
/// mode the reference timeline is the wall clock at start.
SendStats send_fleet(const sensors::Simulator& sim, const SendOptions& options);

/// Re-emits stored frames, one connection per device, paced at `speed` times
/// their original receive-time spacing (ignored unless options.realtime).
SendStats replay_log(const std::filesystem::path& log_dir, const SendOptions& options);

/// Sends pre-built per-device frame lists; exposed for tests and benchmarks.
SendStats send_streams(const std::vector<std::vector<fleet::EmittedFrame>>& per_device, const SendOptions& options,
                       Nanos pacing_origin);

}  // namespace shf::collector
