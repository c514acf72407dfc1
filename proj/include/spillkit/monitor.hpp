#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "spillkit/concurrency.hpp"
#include "spillkit/diffusion.hpp"
#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"
#include "spillkit/http.hpp"
#include "spillkit/image.hpp"
#include "spillkit/util.hpp"
#include "spillkit/vlm.hpp"

namespace spillkit {

struct FrameEvent {
  std::string frame_id;  // "<source_id>#<sequence>"
  std::int64_t sequence = 0;
  std::string source_id;
  std::int64_t timestamp_ms = 0;  // UTC, milliseconds since the epoch
  std::string origin;             // file path or "http"
  Bytes image;
  std::string hash;
  int width = 0;
  int height = 0;
  bool late = false;

  std::string timestamp() const {
    return utc_timestamp(std::chrono::system_clock::time_point(std::chrono::milliseconds(timestamp_ms)));
  }
};

inline std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct SkipRecord {
  std::string source_id;
  std::string origin;
  std::string reason;
  std::string timestamp;
};

inline json to_json(const SkipRecord& s) {
  return {{"event", "skip"}, {"source_id", s.source_id}, {"origin", s.origin}, {"reason", s.reason}, {"timestamp", s.timestamp}};
}

/// Turns raw images into frame events. Suppresses repeated content per
/// source, flags frames older than the newest already seen from the same
/// source, and records undecodable input instead of emitting it.
/// Thread-safe.
class FrameIngestor {
 public:
  explicit FrameIngestor(ReplayLog* skip_log = nullptr) : skip_log_(skip_log) {}

  std::optional<FrameEvent> accept(const std::string& source_id, Bytes image, const std::string& origin,
                                   std::optional<std::int64_t> timestamp_ms = std::nullopt) {
    if (source_id.empty()) throw Error(Errc::validation, "frame source_id must not be empty");
    FrameEvent ev;
    try {
      const GrayImage decoded = decode_png_gray(image);
      ev.width = decoded.width;
      ev.height = decoded.height;
    } catch (const Error& e) {
      skip(source_id, origin, e.what());
      return std::nullopt;
    }
    ev.hash = sha256_hex(image);
    std::lock_guard lk(mu_);
    auto& src = sources_[source_id];
    if (!src.hashes.insert(ev.hash).second) return std::nullopt;
    ev.source_id = source_id;
    ev.origin = origin;
    ev.image = std::move(image);
    ev.timestamp_ms = timestamp_ms.value_or(now_ms());
    ev.late = src.newest && ev.timestamp_ms < *src.newest;
    if (!src.newest || ev.timestamp_ms > *src.newest) src.newest = ev.timestamp_ms;
    ev.sequence = next_sequence_++;
    ev.frame_id = source_id + "#" + std::to_string(src.count++);
    return ev;
  }

  /// New image files in `dir` since the previous scan, ordered by
  /// modification time then name. The file's mtime is the frame time.
  std::vector<FrameEvent> poll_directory(const std::filesystem::path& dir, const std::string& source_id) {
    namespace fs = std::filesystem;
    struct Candidate {
      fs::file_time_type mtime;
      fs::path path;
    };
    std::vector<Candidate> fresh;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename().string();
      if (name.empty() || name.front() == '.' || name.ends_with(".tmp")) continue;
      const auto mtime = entry.last_write_time();
      const auto key = entry.path().string();
      {
        std::lock_guard lk(mu_);
        const auto it = seen_files_.find(key);
        if (it != seen_files_.end() && it->second == mtime) continue;
        seen_files_[key] = mtime;
      }
      fresh.push_back({mtime, entry.path()});
    }
    std::sort(fresh.begin(), fresh.end(), [](const Candidate& a, const Candidate& b) {
      return a.mtime != b.mtime ? a.mtime < b.mtime : a.path < b.path;
    });
    std::vector<FrameEvent> out;
    for (const auto& c : fresh) {
      Bytes bytes;
      try {
        bytes = read_file(c.path);
      } catch (const Error& e) {
        skip(source_id, c.path.string(), e.what());
        continue;
      }
      const auto sys = std::chrono::file_clock::to_sys(c.mtime);
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(sys.time_since_epoch()).count();
      if (auto ev = accept(source_id, std::move(bytes), c.path.string(), ms)) out.push_back(std::move(*ev));
    }
    return out;
  }

  std::vector<SkipRecord> skips() const {
    std::lock_guard lk(mu_);
    return skips_;
  }

 private:
  struct SourceState {
    std::set<std::string> hashes;
    std::optional<std::int64_t> newest;
    std::int64_t count = 0;
  };

  void skip(const std::string& source_id, const std::string& origin, const std::string& reason) {
    SkipRecord rec{source_id, origin, reason, utc_timestamp()};
    if (skip_log_ != nullptr) skip_log_->append(to_json(rec));
    std::lock_guard lk(mu_);
    skips_.push_back(std::move(rec));
  }

  mutable std::mutex mu_;
  std::map<std::string, SourceState> sources_;
  std::map<std::string, std::filesystem::file_time_type> seen_files_;
  std::vector<SkipRecord> skips_;
  std::int64_t next_sequence_ = 0;
  ReplayLog* skip_log_;
};

struct ThresholdPolicy {
  double default_threshold = 0.5;
  std::map<ClassId, double> per_class;
  std::optional<double> min_area;  // px^2

  double threshold_for(ClassId c) const {
    const auto it = per_class.find(c);
    return it == per_class.end() ? default_threshold : it->second;
  }

  bool admits(const Detection& d) const {
    if (d.score < threshold_for(d.class_id)) return false;
    return !min_area || d.bbox.area() >= *min_area;
  }

  void validate(const std::string& prefix = "thresholds") const {
    auto check = [](const std::string& field, double v) {
      if (!(v >= 0.0 && v <= 1.0)) throw BandError(field, "threshold must lie in [0, 1]");
    };
    check(prefix + ".default", default_threshold);
    for (const auto& [c, v] : per_class) check(prefix + ".per_class." + std::to_string(c), v);
    if (min_area && !(*min_area >= 0.0)) throw BandError(prefix + ".min_area", "minimum area must be non-negative");
  }
};

enum class Severity { low, medium, high };

inline std::string to_string(Severity s) {
  switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
  }
  return "?";
}

inline Severity severity_from_string(const std::string& s) {
  if (s == "low") return Severity::low;
  if (s == "medium") return Severity::medium;
  if (s == "high") return Severity::high;
  throw Error(Errc::invalid_input, "unknown severity '" + s + "'");
}

/// low below `medium_from`; medium below `high_from` or when the box covers
/// less than `small_area_fraction` of the frame; high otherwise.
struct SeverityRules {
  double medium_from = 0.7;
  double high_from = 0.9;
  double small_area_fraction = 0.01;

  Severity classify(double score, double box_area, double frame_area) const {
    if (score < medium_from) return Severity::low;
    if (score < high_from) return Severity::medium;
    if (frame_area > 0 && box_area < small_area_fraction * frame_area) return Severity::medium;
    return Severity::high;
  }

  void validate(const std::string& prefix = "severity") const {
    if (!(medium_from >= 0.0 && medium_from <= 1.0)) throw BandError(prefix + ".medium_from", "must lie in [0, 1]");
    if (!(high_from >= medium_from && high_from <= 1.0))
      throw BandError(prefix + ".high_from", "must lie in [medium_from, 1]");
    if (!(small_area_fraction >= 0.0 && small_area_fraction <= 1.0))
      throw BandError(prefix + ".small_area_fraction", "must lie in [0, 1]");
  }
};

struct AlertRecord {
  std::string alert_id;
  std::string frame_id;
  std::string source_id;
  std::string timestamp;
  ClassId class_id = 0;
  BBox bbox;
  double score = 0;
  Severity severity = Severity::low;

  bool operator==(const AlertRecord&) const = default;
};

inline json to_json(const AlertRecord& a) {
  const auto b = a.bbox.xywh();
  return {{"alert_id", a.alert_id}, {"frame_id", a.frame_id}, {"source_id", a.source_id},
          {"timestamp", a.timestamp}, {"class_id", a.class_id},  {"bbox", {b[0], b[1], b[2], b[3]}},
          {"score", a.score},         {"severity", to_string(a.severity)}};
}

inline AlertRecord alert_from_json(const json& j) {
  try {
    AlertRecord a;
    a.alert_id = j.at("alert_id").get<std::string>();
    a.frame_id = j.at("frame_id").get<std::string>();
    a.source_id = j.at("source_id").get<std::string>();
    a.timestamp = j.at("timestamp").get<std::string>();
    a.class_id = j.at("class_id").get<ClassId>();
    const auto b = j.at("bbox").get<std::array<double, 4>>();
    a.bbox = BBox::from_xywh(b[0], b[1], b[2], b[3]);
    a.score = j.at("score").get<double>();
    a.severity = severity_from_string(j.at("severity").get<std::string>());
    return a;
  } catch (const json::exception& e) {
    throw Error(Errc::validation, std::string("malformed alert record: ") + e.what());
  }
}

/// Frame identity carried into alert decisions. Kept separate from the image
/// bytes so logged frames can be re-decided.
struct FrameMeta {
  std::string frame_id;
  std::string source_id;
  std::string timestamp;
  int width = 0;
  int height = 0;
};

inline FrameMeta meta_of(const FrameEvent& ev) { return {ev.frame_id, ev.source_id, ev.timestamp(), ev.width, ev.height}; }

/// The alert decision: exactly the detections the policy admits, in
/// detection order. Alert ids depend only on the frame and the detection.
inline std::vector<AlertRecord> decide_alerts(const FrameMeta& frame, const std::vector<Detection>& detections,
                                              const ThresholdPolicy& policy, const SeverityRules& severity) {
  std::vector<AlertRecord> out;
  const double frame_area = static_cast<double>(frame.width) * frame.height;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const Detection& d = detections[i];
    if (!policy.admits(d)) continue;
    AlertRecord a;
    const std::string key = frame.frame_id + "|" + std::to_string(i) + "|" + std::to_string(d.class_id) + "|" +
                            to_string(d.bbox) + "|" + std::to_string(d.score);
    a.alert_id = "alert-" + sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(key.data()), key.size())).substr(0, 16);
    a.frame_id = frame.frame_id;
    a.source_id = frame.source_id;
    a.timestamp = frame.timestamp;
    a.class_id = d.class_id;
    a.bbox = d.bbox;
    a.score = d.score;
    a.severity = severity.classify(d.score, d.bbox.area(), frame_area);
    out.push_back(std::move(a));
  }
  return out;
}

/// Produces detections for a whole frame. Throws Error(transport) when the
/// backend cannot be reached.
class FrameDetector {
 public:
  virtual ~FrameDetector() = default;
  virtual std::vector<Detection> detect(const FrameEvent& frame, const std::vector<ClassId>& classes) = 0;
};

/// One VLM call per class.
class VlmFrameDetector : public FrameDetector {
 public:
  explicit VlmFrameDetector(VlmDetector& detector, const IclSupportSet* support = nullptr)
      : detector_(detector), support_(support) {}

  std::vector<Detection> detect(const FrameEvent& frame, const std::vector<ClassId>& classes) override {
    ImageInput in;
    in.image_id = frame.sequence;
    in.data = frame.image;
    in.width = frame.width;
    in.height = frame.height;
    std::vector<Detection> out;
    for (ClassId c : classes) {
      auto parsed = detector_.detect(in, c, support_);
      for (auto& d : parsed.detections) {
        d.class_id = c;
        out.push_back(d);
      }
    }
    return out;
  }

 private:
  VlmDetector& detector_;
  const IclSupportSet* support_;
};

struct FrameOutcome {
  FrameMeta frame;
  bool failed = false;
  int attempts = 0;
  std::string error;
  std::vector<Detection> detections;
  std::vector<AlertRecord> alerts;
};

inline json detections_to_json(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    const auto b = d.bbox.xywh();
    arr.push_back({{"class_id", d.class_id}, {"bbox", {b[0], b[1], b[2], b[3]}}, {"score", d.score}});
  }
  return arr;
}

inline std::vector<Detection> detections_from_json(const json& arr) {
  std::vector<Detection> out;
  for (const auto& j : arr) {
    const auto b = j.at("bbox").get<std::array<double, 4>>();
    out.push_back({BBox::from_xywh(b[0], b[1], b[2], b[3]), j.at("class_id").get<ClassId>(), j.at("score").get<double>()});
  }
  return out;
}

inline json to_json(const FrameOutcome& o) {
  json alerts = json::array();
  for (const auto& a : o.alerts) alerts.push_back(to_json(a));
  json j = {{"event", "frame"},
            {"frame_id", o.frame.frame_id},
            {"source_id", o.frame.source_id},
            {"timestamp", o.frame.timestamp},
            {"width", o.frame.width},
            {"height", o.frame.height},
            {"status", o.failed ? "failed" : "ok"},
            {"attempts", o.attempts},
            {"detections", detections_to_json(o.detections)},
            {"alerts", alerts}};
  if (!o.error.empty()) j["error"] = o.error;
  return j;
}

/// Detect, decide, and log one frame. Transport failures are retried per
/// `retry`; a frame that still fails yields no alerts. Every outcome is
/// appended to `log` when one is given.
inline FrameOutcome evaluate_frame(const FrameEvent& frame, FrameDetector& detector, const std::vector<ClassId>& classes,
                                   const ThresholdPolicy& policy, const SeverityRules& severity,
                                   const RetryPolicy& retry = {}, ReplayLog* log = nullptr,
                                   const Sleeper& sleep = real_sleeper()) {
  FrameOutcome out;
  out.frame = meta_of(frame);
  while (true) {
    ++out.attempts;
    try {
      out.detections = detector.detect(frame, classes);
      out.error.clear();
      break;
    } catch (const Error& e) {
      out.error = e.what();
      if (e.code() != Errc::transport || out.attempts >= retry.max_attempts) {
        out.failed = true;
        break;
      }
    } catch (const std::exception& e) {
      out.error = e.what();
      out.failed = true;
      break;
    }
    sleep(retry.backoff(out.attempts));
  }
  if (out.failed) out.detections.clear();
  else out.alerts = decide_alerts(out.frame, out.detections, policy, severity);
  if (log != nullptr) log->append(to_json(out));
  return out;
}

/// Re-decides alerts from a detection log. On an unchanged policy the result
/// equals the alerts recorded in the log.
inline std::vector<AlertRecord> replay_alerts(const std::vector<json>& log, const ThresholdPolicy& policy,
                                              const SeverityRules& severity) {
  std::vector<AlertRecord> out;
  for (const auto& e : log) {
    if (e.value("event", "") != "frame" || e.value("status", "") != "ok") continue;
    FrameMeta meta{e.at("frame_id").get<std::string>(), e.at("source_id").get<std::string>(),
                   e.at("timestamp").get<std::string>(), e.at("width").get<int>(), e.at("height").get<int>()};
    auto alerts = decide_alerts(meta, detections_from_json(e.at("detections")), policy, severity);
    out.insert(out.end(), alerts.begin(), alerts.end());
  }
  return out;
}

inline std::vector<AlertRecord> recorded_alerts(const std::vector<json>& log) {
  std::vector<AlertRecord> out;
  for (const auto& e : log)
    if (e.value("event", "") == "frame")
      for (const auto& a : e.at("alerts")) out.push_back(alert_from_json(a));
  return out;
}

class AlertSink {
 public:
  virtual ~AlertSink() = default;
  virtual std::string name() const = 0;
  /// Throws on delivery failure.
  virtual void deliver(const AlertRecord& alert) = 0;
};

class WebhookSink : public AlertSink {
 public:
  explicit WebhookSink(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(10))
      : url_(std::move(url)), client_(url_, {}, timeout) {}

  std::string name() const override { return "webhook:" + url_; }

  void deliver(const AlertRecord& alert) override {
    const auto res = client_.post(client_.endpoint().path.empty() ? "/" : "", to_json(alert).dump());
    if (res.status < 200 || res.status >= 300)
      throw Error(Errc::transport, "webhook answered HTTP " + std::to_string(res.status));
  }

 private:
  std::string url_;
  http::Client client_;
};

class LogSink : public AlertSink {
 public:
  explicit LogSink(std::filesystem::path path) : log_(std::move(path)) {}
  std::string name() const override { return "log:" + log_.path().string(); }
  void deliver(const AlertRecord& alert) override { log_.append(to_json(alert)); }

 private:
  ReplayLog log_;
};

struct DeliveryResult {
  std::string sink;
  bool delivered = false;
  int attempts = 0;
  std::string error;
};

struct DispatchOptions {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{200};
};

/// Delivers to every sink, retrying each up to `max_attempts` times. A sink
/// that never accepts gets a dead-letter entry.
inline std::vector<DeliveryResult> dispatch_alert(const AlertRecord& alert, const std::vector<AlertSink*>& sinks,
                                                  ReplayLog* dead_letter, const DispatchOptions& opts = {},
                                                  const Sleeper& sleep = real_sleeper()) {
  if (sinks.empty()) throw Error(Errc::invalid_input, "at least one alert sink must be configured");
  std::vector<DeliveryResult> results;
  for (auto* sink : sinks) {
    DeliveryResult r;
    r.sink = sink->name();
    while (r.attempts < opts.max_attempts) {
      ++r.attempts;
      try {
        sink->deliver(alert);
        r.delivered = true;
        r.error.clear();
        break;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      if (r.attempts < opts.max_attempts) sleep(opts.base_backoff * (1LL << (r.attempts - 1)));
    }
    if (!r.delivered && dead_letter != nullptr)
      dead_letter->append({{"sink", r.sink}, {"attempts", r.attempts}, {"error", r.error},
                           {"failed_at", utc_timestamp()}, {"alert", to_json(alert)}});
    results.push_back(std::move(r));
  }
  return results;
}

struct MonitorOptions {
  std::vector<ClassId> classes{1};
  ThresholdPolicy policy;
  SeverityRules severity;
  RetryPolicy retry;
  DispatchOptions dispatch;
  std::size_t detection_workers = 2;
  std::size_t queue_capacity = 64;
};

struct MonitorStats {
  std::size_t frames = 0;
  std::size_t failed = 0;
  std::size_t alerts = 0;
  std::size_t dead_lettered = 0;
};

/// Detection and dispatch stages joined by bounded queues. Frames are sharded
/// by source, so each source's frames are detected in submission order, and
/// alerts are dispatched in the order their frames finished.
class MonitorService {
 public:
  MonitorService(FrameDetector& detector, std::vector<AlertSink*> sinks, MonitorOptions opts,
                 ReplayLog* detection_log = nullptr, ReplayLog* dead_letter = nullptr, Sleeper sleep = real_sleeper())
      : detector_(detector),
        sinks_(std::move(sinks)),
        opts_(std::move(opts)),
        detection_log_(detection_log),
        dead_letter_(dead_letter),
        sleep_(std::move(sleep)),
        alerts_(opts_.queue_capacity) {
    opts_.policy.validate();
    opts_.severity.validate();
    if (opts_.detection_workers < 1) throw BandError("parallelism.detection_workers", "must be at least 1");
    for (std::size_t i = 0; i < opts_.detection_workers; ++i)
      shards_.push_back(std::make_unique<BoundedQueue<FrameEvent>>(opts_.queue_capacity));
    for (std::size_t i = 0; i < shards_.size(); ++i) workers_.emplace_back([this, i] { detect_loop(*shards_[i]); });
    dispatcher_ = std::jthread([this] { dispatch_loop(); });
  }

  ~MonitorService() { stop(); }

  MonitorService(const MonitorService&) = delete;
  MonitorService& operator=(const MonitorService&) = delete;

  /// Blocks while the source's shard is full. False after stop().
  bool submit(FrameEvent frame) {
    const std::size_t shard = std::hash<std::string>{}(frame.source_id) % shards_.size();
    return shards_[shard]->push(std::move(frame));
  }

  /// Drains every queue and joins the stages.
  void stop() {
    std::lock_guard lk(stop_mu_);
    if (stopped_) return;
    stopped_ = true;
    for (auto& q : shards_) q->close();
    workers_.clear();
    alerts_.close();
    if (dispatcher_.joinable()) dispatcher_.join();
  }

  MonitorStats stats() const {
    std::lock_guard lk(stats_mu_);
    return stats_;
  }

  std::vector<FrameOutcome> outcomes() const {
    std::lock_guard lk(stats_mu_);
    return outcomes_;
  }

 private:
  void detect_loop(BoundedQueue<FrameEvent>& queue) {
    while (auto frame = queue.pop()) {
      FrameOutcome out =
          evaluate_frame(*frame, detector_, opts_.classes, opts_.policy, opts_.severity, opts_.retry, detection_log_, sleep_);
      {
        std::lock_guard lk(stats_mu_);
        ++stats_.frames;
        if (out.failed) ++stats_.failed;
        outcomes_.push_back(out);
      }
      for (auto& a : out.alerts) alerts_.push(std::move(a));
    }
  }

  void dispatch_loop() {
    while (auto alert = alerts_.pop()) {
      const auto results = sinks_.empty() ? std::vector<DeliveryResult>{}
                                          : dispatch_alert(*alert, sinks_, dead_letter_, opts_.dispatch, sleep_);
      std::lock_guard lk(stats_mu_);
      ++stats_.alerts;
      for (const auto& r : results)
        if (!r.delivered) ++stats_.dead_lettered;
    }
  }

  FrameDetector& detector_;
  std::vector<AlertSink*> sinks_;
  MonitorOptions opts_;
  ReplayLog* detection_log_;
  ReplayLog* dead_letter_;
  Sleeper sleep_;
  std::vector<std::unique_ptr<BoundedQueue<FrameEvent>>> shards_;
  BoundedQueue<AlertRecord> alerts_;
  std::vector<std::jthread> workers_;
  std::jthread dispatcher_;
  mutable std::mutex stats_mu_;
  MonitorStats stats_;
  std::vector<FrameOutcome> outcomes_;
  std::mutex stop_mu_;
  bool stopped_ = false;
};

/// Polls a directory on a background thread and feeds new frames to a
/// service.
class DirectoryWatcher {
 public:
  DirectoryWatcher(FrameIngestor& ingestor, MonitorService& service, std::filesystem::path dir, std::string source_id,
                   std::chrono::milliseconds interval = std::chrono::seconds(1))
      : thread_([&ingestor, &service, dir = std::move(dir), source_id = std::move(source_id), interval](std::stop_token st) {
          while (!st.stop_requested()) {
            try {
              for (auto& ev : ingestor.poll_directory(dir, source_id)) service.submit(std::move(ev));
            } catch (const std::exception&) {
              // a directory that vanished or is unreadable is retried next tick
            }
            for (auto waited = std::chrono::milliseconds(0); waited < interval && !st.stop_requested();
                 waited += std::chrono::milliseconds(20))
              std::this_thread::sleep_for(std::chrono::milliseconds(20));
          }
        }) {}

  void stop() {
    thread_.request_stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  std::jthread thread_;
};

/// POST /frames (multipart: "image" file, "source_id", optional
/// "timestamp_ms") and GET /health.
class MonitorServer {
 public:
  MonitorServer(FrameIngestor& ingestor, MonitorService& service) : ingestor_(ingestor), service_(service) {
    server_.Post("/frames", [this](const httplib::Request& req, httplib::Response& res) { handle_frame(req, res); });
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      const auto s = service_.stats();
      res.set_content(json{{"status", "ok"}, {"frames", s.frames}, {"failed", s.failed}, {"alerts", s.alerts}}.dump(),
                      "application/json");
    });
  }

  httplib::Server& server() { return server_; }

  /// Binds to an ephemeral port when `port` is 0; returns the bound port.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(Errc::io, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  void listen() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void handle_frame(const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("image") || !req.has_file("source_id"))
      return reply(res, 400, {{"error", "expected multipart fields 'image' and 'source_id'"}});
    const auto image = req.get_file_value("image");
    const auto source = req.get_file_value("source_id").content;
    std::optional<std::int64_t> ts;
    if (req.has_file("timestamp_ms")) {
      try {
        ts = std::stoll(req.get_file_value("timestamp_ms").content);
      } catch (const std::exception&) {
        return reply(res, 400, {{"error", "timestamp_ms must be an integer"}});
      }
    }
    const std::size_t skips_before = ingestor_.skips().size();
    std::optional<FrameEvent> ev;
    try {
      ev = ingestor_.accept(source, Bytes(image.content.begin(), image.content.end()), "http", ts);
    } catch (const Error& e) {
      return reply(res, 400, {{"error", e.what()}});
    }
    if (!ev) {
      if (ingestor_.skips().size() > skips_before) return reply(res, 422, {{"error", "image could not be decoded"}});
      return reply(res, 200, {{"status", "duplicate"}});
    }
    const json body = {{"status", "accepted"}, {"frame_id", ev->frame_id}, {"late", ev->late}};
    if (!service_.submit(std::move(*ev))) return reply(res, 503, {{"error", "monitor is shutting down"}});
    reply(res, 202, body);
  }

  FrameIngestor& ingestor_;
  MonitorService& service_;
  httplib::Server server_;
};

}  // namespace spillkit
