#include "shf/collector.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

namespace shf::collector {

namespace fs = std::filesystem;
using nlohmann::json;
using transport::GapKind;
using transport::GapReport;

// ---------------------------------------------------------------------------
// Ingestor

Ingestor::Ingestor(const RunLayout& layout, transport::MonitorConfig monitor, storage::RotationPolicy rotation,
                   std::uint64_t scenario_hash)
    : layout_(layout),
      monitor_(monitor),
      log_((fs::create_directories(layout.root), layout.log_dir()), rotation, scenario_hash),
      gaps_out_(layout.gaps(), std::ios::app),
      transitions_out_(layout.transitions(), std::ios::app) {
  if (!gaps_out_ || !transitions_out_) throw Error(Errc::io_error, "cannot write reports under " + layout.root.string());
}

Ingestor::~Ingestor() {
  try {
    if (!finished_) log_.close();
  } catch (...) {
  }
}

void Ingestor::report(const GapReport& g) {
  if (g.kind == GapKind::sequence_gap) counters_.gap_frames_reported += g.missing_frames();
  gaps_.push_back(g);
  gaps_out_ << transport::to_json(g).dump() << '\n';
}

void Ingestor::transition(const transport::StateTransition& t) {
  transitions_.push_back(t);
  json j{{"device_id", t.device_id},
         {"from", transport::session_state_name(t.from)},
         {"to", transport::session_state_name(t.to)},
         {"at", t.at}};
  transitions_out_ << j.dump() << '\n';
}

void Ingestor::on_frame(std::span<const std::uint8_t> bytes, Nanos receive_time) {
  receive_time = std::max(receive_time, last_receive_);
  last_receive_ = receive_time;
  counters_.bytes_received += bytes.size();
  auto decoded = wire::try_decode_frame(bytes);
  if (!decoded.ok()) {
    ++counters_.frames_rejected;
    GapReport g;
    g.device_id = transport::peek_device_id(bytes).value_or(0);
    g.kind = GapKind::crc_failure;
    g.span_begin = g.span_end = g.detected_at = receive_time;
    report(g);
    return;
  }
  const auto& frame = std::get<wire::Frame>(decoded.value);
  ++counters_.frames_received;
  auto result = sessions_.ingest(frame, std::vector<std::uint8_t>(bytes.begin(), bytes.end()), receive_time);
  if (result.revived) transition(*result.revived);
  for (const auto& g : result.reports) report(g);
  log_.append(result.record);
  ++counters_.frames_stored;
}

void Ingestor::on_backpressure_drop(DeviceId device, std::uint32_t first_seq, std::uint32_t last_seq,
                                    std::uint64_t frames, Nanos now) {
  counters_.frames_dropped_backpressure += frames;
  GapReport g;
  g.device_id = device;
  g.kind = GapKind::backpressure_drop;
  g.first_seq = first_seq;
  g.last_seq = last_seq;
  g.detected_at = now;
  report(g);
}

void Ingestor::advance(Nanos now) {
  while (auto deadline = sessions_.next_deadline(monitor_)) {
    if (*deadline > now) break;
    auto r = sessions_.monitor(*deadline, monitor_);
    for (const auto& t : r.transitions) transition(t);
    for (const auto& g : r.reports) report(g);
    if (r.transitions.empty()) break;
  }
}

void Ingestor::finish(Nanos end) {
  if (finished_) return;
  advance(end);
  log_.close();
  gaps_out_.flush();
  transitions_out_.flush();
  std::ofstream c(layout_.counters());
  c << transport::to_json(counters_).dump(2) << '\n';
  if (!c) throw Error(Errc::io_error, "cannot write " + layout_.counters().string());
  finished_ = true;
}

void ingest_offline(std::span<const fleet::EmittedFrame> frames, Ingestor& ingestor, Nanos end_time) {
  auto& c = ingestor.counters();
  for (const auto& f : frames) {
    ++c.frames_emitted;
    if (f.lost) {
      ++c.frames_lost_in_link;
      continue;
    }
    ingestor.advance(f.arrival_time - 1);
    ingestor.on_frame(f.bytes, f.arrival_time);
  }
  ingestor.finish(end_time);
}

transport::Counters simulate_offline(const sensors::Scenario& scenario, const RunLayout& layout,
                                     storage::RotationPolicy rotation) {
  fs::create_directories(layout.root);
  sensors::Simulator sim(scenario);
  auto frames = fleet::fleet_frames(sim);
  transport::MonitorConfig monitor;
  monitor.heartbeat_interval_ns = seconds_to_ns(scenario.heartbeat_interval_s);
  Nanos end = scenario.duration_ns() + 5 * monitor.heartbeat_interval_ns;
  {
    Ingestor ingestor(layout, monitor, rotation, scenario.source_hash);
    ingest_offline(frames, ingestor, end);
    fleet::write_truth(scenario, layout.truth());
    return ingestor.counters();
  }
}

// ---------------------------------------------------------------------------
// Sockets

Endpoint parse_endpoint(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::parse_error, "address must be host:port, got '" + text + "'");
  Endpoint e;
  if (colon > 0) e.host = text.substr(0, colon);
  try {
    int port = std::stoi(text.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    e.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw Error(Errc::parse_error, "bad port in '" + text + "'");
  }
  return e;
}

Nanos wall_clock_ns() {
  timespec ts{};
  clock_gettime(CLOCK_REALTIME, &ts);
  return static_cast<Nanos>(ts.tv_sec) * kNanosPerSecond + ts.tv_nsec;
}

namespace {

sockaddr_in resolve(const Endpoint& e) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(e.port);
  if (inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(Errc::io_error, "cannot resolve host '" + e.host + "'");
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_;
};

bool magic_at(const std::vector<std::uint8_t>& b, std::size_t pos) {
  return std::equal(wire::kMagic.begin(), wire::kMagic.end(), b.begin() + static_cast<std::ptrdiff_t>(pos));
}

std::uint32_t header_sequence(std::span<const std::uint8_t> b) {
  return b.size() >= 13 ? wire::get_u32(b.data() + 9) : 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Collector

struct Collector::Impl {
  struct Item {
    Nanos stamp;
    std::vector<std::uint8_t> bytes;
  };
  struct Drop {
    DeviceId device;
    std::uint32_t seq;
    Nanos at;
  };

  CollectorConfig config;
  Ingestor& ingestor;
  Fd listener;
  std::uint16_t bound_port = 0;

  std::mutex mu;
  std::condition_variable data_cv;
  std::condition_variable space_cv;
  std::map<std::uint64_t, std::deque<Item>> queues;  // per connection
  std::vector<Drop> drops;
  Nanos last_stamp = 0;
  Nanos last_activity = 0;
  std::uint64_t next_conn = 0;
  std::uint64_t accepted = 0;
  int open_connections = 0;
  std::map<std::uint64_t, int> conn_fds;
  std::atomic<bool> stopping{false};
  std::vector<std::thread> readers;

  Impl(CollectorConfig c, Ingestor& ing) : config(std::move(c)), ingestor(ing) {
    listener = Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (listener.get() < 0) throw Error(Errc::bind_failure, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listener.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    auto addr = resolve(config.listen);
    if (::bind(listener.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      throw Error(Errc::bind_failure, config.listen.host + ":" + std::to_string(config.listen.port) + ": " +
                                          std::strerror(errno));
    }
    if (::listen(listener.get(), 64) != 0) throw Error(Errc::bind_failure, std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port = ntohs(addr.sin_port);
  }

  void enqueue(std::uint64_t conn, std::vector<std::uint8_t> bytes) {
    std::unique_lock lk(mu);
    auto& q = queues[conn];
    if (q.size() >= config.queue_capacity) {
      auto deadline = std::chrono::steady_clock::now() + std::chrono::nanoseconds(config.queue_wait_ns);
      space_cv.wait_until(lk, deadline, [&] { return q.size() < config.queue_capacity || stopping.load(); });
      if (q.size() >= config.queue_capacity) {
        const auto& old = q.front().bytes;
        drops.push_back({transport::peek_device_id(old).value_or(0), header_sequence(old), last_stamp});
        q.pop_front();
      }
    }
    const Nanos stamp = std::max(wall_clock_ns(), last_stamp);
    last_stamp = stamp;
    last_activity = stamp;
    q.push_back({stamp, std::move(bytes)});
    data_cv.notify_one();
  }

  void read_connection(std::uint64_t conn, Fd fd) {
    std::vector<std::uint8_t> buf;
    std::vector<std::uint8_t> chunk(1 << 16);
    std::size_t pos = 0;
    for (;;) {
      ssize_t n = ::recv(fd.get(), chunk.data(), chunk.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
      for (;;) {
        std::size_t avail = buf.size() - pos;
        if (avail < wire::kMagic.size()) break;
        if (!magic_at(buf, pos)) {
          // Lost framing: skip to the next plausible frame start.
          ++pos;
          while (buf.size() - pos >= wire::kMagic.size() && !magic_at(buf, pos)) ++pos;
          continue;
        }
        if (avail < wire::kHeaderSize) break;
        std::uint32_t payload_len = wire::get_u32(buf.data() + pos + 21);
        if (payload_len > wire::kMaxPayload) {
          enqueue(conn, std::vector<std::uint8_t>(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                                  buf.begin() + static_cast<std::ptrdiff_t>(pos + wire::kHeaderSize)));
          ++pos;
          continue;
        }
        std::size_t len = wire::kHeaderSize + payload_len + wire::kTrailerSize;
        if (avail < len) break;
        enqueue(conn, std::vector<std::uint8_t>(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                                buf.begin() + static_cast<std::ptrdiff_t>(pos + len)));
        pos += len;
      }
      if (pos > 0) {
        buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(pos));
        pos = 0;
      }
    }
    if (!buf.empty()) enqueue(conn, std::move(buf));  // truncated tail, rejected by the ingestor
    std::lock_guard lk(mu);
    --open_connections;
    conn_fds.erase(conn);
    last_activity = std::max(last_activity, wall_clock_ns());
    data_cv.notify_one();
  }

  void accept_loop() {
    while (!stopping.load()) {
      pollfd p{listener.get(), POLLIN, 0};
      int r = ::poll(&p, 1, 50);
      if (r <= 0) continue;
      int c = ::accept(listener.get(), nullptr, nullptr);
      if (c < 0) continue;
      int one = 1;
      ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lk(mu);
      std::uint64_t id = next_conn++;
      ++accepted;
      ++open_connections;
      conn_fds[id] = c;
      last_activity = std::max(last_activity, wall_clock_ns());
      readers.emplace_back([this, id, c] { read_connection(id, Fd(c)); });
    }
  }

  void writer_loop() {
    std::unique_lock lk(mu);
    for (;;) {
      data_cv.wait_for(lk, std::chrono::milliseconds(50));
      for (;;) {
        if (!drops.empty()) {
          auto pending = std::move(drops);
          drops.clear();
          lk.unlock();
          for (const auto& d : pending) ingestor.on_backpressure_drop(d.device, d.seq, d.seq, 1, d.at);
          lk.lock();
        }
        std::deque<Item>* best = nullptr;
        for (auto& [id, q] : queues) {
          if (!q.empty() && (best == nullptr || q.front().stamp < best->front().stamp)) best = &q;
        }
        if (best == nullptr) break;
        Item item = std::move(best->front());
        best->pop_front();
        space_cv.notify_all();
        lk.unlock();
        ingestor.advance(item.stamp - 1);
        ingestor.on_frame(item.bytes, item.stamp);
        lk.lock();
      }
      // Everything stamped so far has been ingested, so liveness can be
      // evaluated up to the present.
      const Nanos now = std::max(wall_clock_ns(), last_stamp);
      lk.unlock();
      ingestor.advance(now);
      lk.lock();
      for (auto it = queues.begin(); it != queues.end();) {
        it = (it->second.empty() && !conn_fds.contains(it->first)) ? queues.erase(it) : std::next(it);
      }
      const bool drained = queues.empty() || std::all_of(queues.begin(), queues.end(), [](auto& kv) { return kv.second.empty(); });
      if (stopping.load() && open_connections == 0 && drained) break;
      if (config.exit_when_idle_ns > 0 && accepted > 0 && open_connections == 0 && drained &&
          now - last_activity >= config.exit_when_idle_ns) {
        stopping.store(true);
        break;
      }
    }
  }

  void request_stop() {
    stopping.store(true);
    std::lock_guard lk(mu);
    for (auto& [id, fd] : conn_fds) ::shutdown(fd, SHUT_RDWR);
    space_cv.notify_all();
    data_cv.notify_all();
  }
};

Collector::Collector(CollectorConfig config, Ingestor& ingestor)
    : impl_(std::make_unique<Impl>(std::move(config), ingestor)) {}

Collector::~Collector() {
  if (impl_) {
    impl_->request_stop();
    std::vector<std::thread> readers;
    {
      std::lock_guard lk(impl_->mu);
      readers = std::move(impl_->readers);
    }
    for (auto& t : readers) {
      if (t.joinable()) t.join();
    }
  }
}

std::uint16_t Collector::port() const { return impl_->bound_port; }

std::uint64_t Collector::connections_accepted() const {
  std::lock_guard lk(impl_->mu);
  return impl_->accepted;
}

void Collector::run() {
  std::thread acceptor([this] { impl_->accept_loop(); });
  impl_->writer_loop();
  impl_->request_stop();
  acceptor.join();
  std::vector<std::thread> readers;
  {
    std::lock_guard lk(impl_->mu);
    readers = std::move(impl_->readers);
  }
  for (auto& t : readers) t.join();
  // Readers may have enqueued a final truncated tail before exiting.
  for (auto& [id, q] : impl_->queues) {
    for (auto& item : q) impl_->ingestor.on_frame(item.bytes, item.stamp);
    q.clear();
  }
  impl_->ingestor.finish(std::max(wall_clock_ns(), impl_->last_stamp));
}

void Collector::stop() { impl_->request_stop(); }

// ---------------------------------------------------------------------------
// Senders

namespace {

Fd connect_to(const Endpoint& e) {
  auto addr = resolve(e);
  auto give_up = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  for (;;) {
    Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (fd.get() < 0) throw Error(Errc::io_error, std::string("socket: ") + std::strerror(errno));
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
      int one = 1;
      ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return fd;
    }
    if (std::chrono::steady_clock::now() > give_up) {
      throw Error(Errc::io_error, "cannot connect to " + e.host + ":" + std::to_string(e.port) + ": " +
                                      std::strerror(errno));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

void send_all(int fd, std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::io_error, std::string("send: ") + std::strerror(errno));
    }
    bytes = bytes.subspan(static_cast<std::size_t>(n));
  }
}

void sleep_until_wall(Nanos target) {
  for (;;) {
    Nanos now = wall_clock_ns();
    if (now >= target) return;
    std::this_thread::sleep_for(std::chrono::nanoseconds(std::min<Nanos>(target - now, 50 * kNanosPerMilli)));
  }
}

}  // namespace

SendStats send_streams(const std::vector<std::vector<fleet::EmittedFrame>>& per_device, const SendOptions& options,
                       Nanos pacing_origin) {
  std::vector<SendStats> stats(per_device.size());
  std::vector<std::exception_ptr> errors(per_device.size());
  const auto t_start = std::chrono::steady_clock::now();
  std::vector<std::thread> threads;
  for (std::size_t d = 0; d < per_device.size(); ++d) {
    threads.emplace_back([&, d] {
      try {
        Fd fd = connect_to(options.to);
        std::vector<std::uint8_t> batch;
        batch.reserve(1 << 18);
        const auto& frames = per_device[d];
        for (std::size_t i = 0; i < frames.size(); ++i) {
          const auto& f = frames[i];
          ++stats[d].frames_emitted;
          if (f.lost) continue;
          if (options.realtime) {
            sleep_until_wall(pacing_origin + static_cast<Nanos>(static_cast<double>(f.send_time) / options.speed));
          }
          batch.insert(batch.end(), f.bytes.begin(), f.bytes.end());
          ++stats[d].frames_sent;
          stats[d].bytes_sent += f.bytes.size();
          const bool next_due_now = i + 1 < frames.size() && frames[i + 1].send_time == f.send_time;
          if (batch.size() >= (1 << 18) || (options.realtime && !next_due_now)) {
            send_all(fd.get(), batch);
            batch.clear();
          }
        }
        send_all(fd.get(), batch);
        ::shutdown(fd.get(), SHUT_WR);
        // Wait for the collector to close its side so nothing is in flight.
        char sink[256];
        while (::recv(fd.get(), sink, sizeof sink, 0) > 0) {
        }
      } catch (...) {
        errors[d] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  SendStats total;
  for (const auto& s : stats) {
    total.frames_sent += s.frames_sent;
    total.frames_emitted += s.frames_emitted;
    total.bytes_sent += s.bytes_sent;
  }
  total.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return total;
}

SendStats send_fleet(const sensors::Simulator& sim, const SendOptions& options) {
  fleet::FleetOptions fo;
  // Live links are reliable byte streams; loss and corruption are only
  // injected on the direct-to-log path.
  fo.link_faults = false;
  // Lead time so frame generation does not eat into the first deadlines.
  std::vector<std::vector<fleet::EmittedFrame>> per_device;
  Nanos origin = 0;
  if (options.realtime) {
    origin = wall_clock_ns() + kNanosPerSecond;
    fo.reference_base = origin;
  }
  for (const auto& s : sim.scenario().sensors) per_device.push_back(fleet::device_frames(sim, s, fo));
  if (options.realtime && wall_clock_ns() > origin) {
    throw Error(Errc::io_error, "frame generation overran the realtime start; use --fast");
  }
  return send_streams(per_device, options, origin);
}

SendStats replay_log(const fs::path& log_dir, const SendOptions& options) {
  storage::LogReader reader(log_dir);
  std::map<DeviceId, std::vector<fleet::EmittedFrame>> by_device;
  std::optional<std::uint64_t> first;
  reader.iterate(0, UINT64_MAX, [&](storage::RecordRef, std::uint64_t rt, std::span<const std::uint8_t> frame) {
    if (!first) first = rt;
    fleet::EmittedFrame f;
    f.device_id = transport::peek_device_id(frame).value_or(0);
    f.send_time = static_cast<Nanos>(rt - *first);
    f.bytes.assign(frame.begin(), frame.end());
    by_device[f.device_id].push_back(std::move(f));
  });
  std::vector<std::vector<fleet::EmittedFrame>> per_device;
  for (auto& [id, frames] : by_device) per_device.push_back(std::move(frames));
  return send_streams(per_device, options, wall_clock_ns() + 100 * kNanosPerMilli);
}

}  // namespace shf::collector
