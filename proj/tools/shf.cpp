// shf: simulate, collect, replay, fuse, eval and twin subcommands.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "shf/collector.hpp"
#include "shf/eval.hpp"
#include "shf/pipeline.hpp"
#include "shf/twin.hpp"

using namespace shf;
using nlohmann::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitValidation = 4;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::parse_error:
    case Errc::unknown_field:
    case Errc::duplicate_rule_id:
    case Errc::unknown_device:
    case Errc::unknown_parameter:
    case Errc::missing_input:
      return kExitInput;
    case Errc::validation_error:
      return kExitValidation;
    default:
      return kExitRuntime;
  }
}

// Blocks SIGINT and SIGTERM in every thread and hands them to `on_signal`
// from a dedicated watcher. Call before any other thread starts.
class SignalWatcher {
 public:
  explicit SignalWatcher(std::function<void()> on_signal) : on_signal_(std::move(on_signal)) {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    sigaddset(&set_, SIGUSR1);
    pthread_sigmask(SIG_BLOCK, &set_, nullptr);
    thread_ = std::thread([this] {
      int sig = 0;
      sigwait(&set_, &sig);
      if (sig != SIGUSR1) on_signal_();
    });
  }
  ~SignalWatcher() {
    pthread_kill(thread_.native_handle(), SIGUSR1);
    thread_.join();
  }

 private:
  sigset_t set_;
  std::function<void()> on_signal_;
  std::thread thread_;
};

void print_json(const json& j) { std::cout << j.dump() << std::endl; }

struct SimulateArgs {
  std::string scenario, out, to;
  std::optional<std::uint64_t> seed;
  bool realtime = false;
  double speed = 1.0;
};

int run_simulate(const SimulateArgs& a) {
  auto scenario = sensors::load_scenario(a.scenario);
  if (a.seed) scenario.seed = *a.seed;
  collector::RunLayout layout{a.out};
  if (a.to.empty()) {
    if (a.realtime) throw Error(Errc::validation_error, "--realtime needs --to");
    auto c = collector::simulate_offline(scenario, layout);
    print_json({{"frames_emitted", c.frames_emitted}, {"frames_stored", c.frames_stored}, {"out", a.out}});
    return 0;
  }
  std::filesystem::create_directories(layout.root);
  sensors::Simulator sim(scenario);
  collector::SendOptions opts;
  opts.to = collector::parse_endpoint(a.to);
  opts.realtime = a.realtime;
  opts.speed = a.speed;
  auto stats = collector::send_fleet(sim, opts);
  fleet::write_truth(scenario, layout.truth());
  print_json({{"frames_emitted", stats.frames_emitted},
              {"frames_sent", stats.frames_sent},
              {"bytes_sent", stats.bytes_sent},
              {"wall_seconds", stats.wall_seconds}});
  return 0;
}

struct CollectArgs {
  std::string listen, out;
  double idle_exit_s = 0;
  std::size_t queue = 4096;
  double heartbeat_s = 1.0;
};

int run_collect(const CollectArgs& a) {
  collector::CollectorConfig cfg;
  cfg.listen = collector::parse_endpoint(a.listen);
  cfg.queue_capacity = a.queue;
  cfg.exit_when_idle_ns = seconds_to_ns(a.idle_exit_s);
  transport::MonitorConfig monitor;
  monitor.heartbeat_interval_ns = seconds_to_ns(a.heartbeat_s);
  collector::RunLayout layout{a.out};
  std::filesystem::create_directories(layout.root);
  collector::Ingestor ingestor(layout, monitor);
  std::atomic<collector::Collector*> live = nullptr;
  std::atomic<bool> interrupted = false;
  SignalWatcher watcher([&] {
    interrupted = true;
    if (auto* c = live.load()) c->stop();
  });
  collector::Collector server(cfg, ingestor);
  live = &server;
  std::cerr << "listening on " << cfg.listen.host << ":" << server.port() << std::endl;
  if (interrupted) server.stop();
  server.run();
  live = nullptr;
  print_json(transport::to_json(ingestor.counters()));
  return 0;
}

struct ReplayArgs {
  std::string log, to;
  double speed = 1.0;
  bool fast = false;
};

int run_replay(const ReplayArgs& a) {
  collector::SendOptions opts;
  opts.to = collector::parse_endpoint(a.to);
  opts.realtime = !a.fast;
  opts.speed = a.speed;
  if (!(a.speed > 0)) throw Error(Errc::validation_error, "--speed must be > 0");
  auto stats = collector::replay_log(a.log, opts);
  print_json({{"frames_sent", stats.frames_sent}, {"bytes_sent", stats.bytes_sent}, {"wall_seconds", stats.wall_seconds}});
  return 0;
}

struct FuseArgs {
  std::string log, config, levels = "0..3", out;
};

int run_fuse(const FuseArgs& a) {
  auto cfg = pipeline::load_fuse_config(a.config);
  auto [first, last] = pipeline::parse_level_range(a.levels);
  auto r = pipeline::fuse(a.log, cfg, a.out, first, last);
  json passes = json::array();
  for (const auto& p : r.passes) passes.push_back(pipeline::to_json(p));
  print_json({{"run_id", r.run_id}, {"config_hash", pipeline::hex64(r.config_hash)}, {"level1", passes}});
  return 0;
}

struct EvalArgs {
  std::string fused, truth, report, golden;
};

int run_eval(const EvalArgs& a) {
  eval::EvalOptions opts;
  if (!a.golden.empty()) opts.golden = a.golden;
  auto report = eval::evaluate(a.fused, a.truth, opts);
  pipeline::write_json(a.report, eval::to_json(report));
  print_json({{"activity_accuracy", report.activity.accuracy},
              {"emotion_accuracy", report.emotion.accuracy},
              {"filter_precision", report.filter.precision},
              {"filter_recall", report.filter.recall},
              {"commands", report.decision.commands}});
  if (report.decision.golden_match && !*report.decision.golden_match) {
    std::cerr << "commands differ from " << a.golden << ": " << report.decision.missing.size() << " missing, "
              << report.decision.extra.size() << " extra" << std::endl;
    return kExitValidation;
  }
  return 0;
}

struct TwinArgs {
  std::string fused, out;
  double cadence = 1.0;
};

int run_twin(const TwinArgs& a) {
  auto in = twin::load_inputs(a.fused);
  auto n = twin::write_stream(in, a.cadence, a.out);
  print_json({{"snapshots", n}, {"out", a.out}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smart-home sensing, fusion and twin toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario into a log directory or a collector");
  simulate->add_option("--scenario", sim.scenario, "Scenario file")->required();
  simulate->add_option("--seed", sim.seed, "Override the scenario seed");
  simulate->add_option("--out", sim.out, "Output directory")->required();
  auto* rt = simulate->add_flag("--realtime", sim.realtime, "Pace frames on the wall clock (needs --to)");
  simulate->add_flag("--fast", "Emit as fast as possible (default)")->excludes(rt);
  simulate->add_option("--to", sim.to, "Collector address host:port");
  simulate->add_option("--speed", sim.speed, "Pacing speed-up in realtime mode")->check(CLI::PositiveNumber);

  CollectArgs col;
  auto* collect = app.add_subcommand("collect", "Receive frames over TCP until interrupted");
  collect->add_option("--listen", col.listen, "Listen address host:port")->required();
  collect->add_option("--out", col.out, "Output directory")->required();
  collect->add_option("--idle-exit", col.idle_exit_s, "Exit after this many idle seconds once senders close");
  collect->add_option("--queue", col.queue, "Per-session queue capacity in frames")->check(CLI::PositiveNumber);
  collect->add_option("--heartbeat", col.heartbeat_s, "Expected heartbeat interval in seconds")
      ->check(CLI::PositiveNumber);

  ReplayArgs rep;
  auto* replay = app.add_subcommand("replay", "Re-emit a stored log to a collector");
  replay->add_option("--log", rep.log, "Log directory")->required();
  replay->add_option("--to", rep.to, "Collector address host:port")->required();
  replay->add_option("--speed", rep.speed, "Multiple of the recorded pacing");
  replay->add_flag("--fast", rep.fast, "Ignore the recorded pacing");

  FuseArgs fu;
  auto* fuse = app.add_subcommand("fuse", "Run the fusion levels over a stored log");
  fuse->add_option("--log", fu.log, "Log directory")->required();
  fuse->add_option("--config", fu.config, "Fuse configuration file")->required();
  fuse->add_option("--levels", fu.levels, "Level range, e.g. 0..3 or 2");
  fuse->add_option("--out", fu.out, "Output directory")->required();

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("eval", "Score a fused run against ground truth");
  evaluate->add_option("--fused", ev.fused, "Fused output directory")->required();
  evaluate->add_option("--truth", ev.truth, "Ground-truth export")->required();
  evaluate->add_option("--report", ev.report, "Report file to write")->required();
  evaluate->add_option("--golden", ev.golden, "Expected commands; a mismatch exits 4");

  TwinArgs tw;
  auto* twin_cmd = app.add_subcommand("twin", "Write a snapshot stream from a fused run");
  twin_cmd->add_option("--fused", tw.fused, "Fused output directory")->required();
  twin_cmd->add_option("--cadence", tw.cadence, "Snapshots per second")->check(CLI::PositiveNumber);
  twin_cmd->add_option("--out", tw.out, "Snapshot stream file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*collect) return run_collect(col);
    if (*replay) return run_replay(rep);
    if (*fuse) return run_fuse(fu);
    if (*evaluate) return run_eval(ev);
    if (*twin_cmd) return run_twin(tw);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitRuntime;
  }
  return kExitRuntime;
}
