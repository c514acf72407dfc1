#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <thread>

#include <httplib.h>

#include "spillkit/spillkit.hpp"

namespace spillkit::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "spillkit-XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// httplib server on an ephemeral loopback port. Register routes on svr()
/// before start().
class StubServer {
 public:
  ~StubServer() { stop(); }

  httplib::Server& svr() { return server_; }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

/// Tracks the peak number of overlapping calls.
struct ConcurrencyGauge {
  std::atomic<int> current{0};
  std::atomic<int> peak{0};

  struct Scope {
    ConcurrencyGauge& g;
    explicit Scope(ConcurrencyGauge& gauge) : g(gauge) {
      const int now = ++g.current;
      int seen = g.peak.load();
      while (now > seen && !g.peak.compare_exchange_weak(seen, now)) {
      }
    }
    ~Scope() { --g.current; }
  };
};

inline GrayImage noise_image(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  GrayImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
  return img;
}

/// Writes a gray PNG whose first two pixels carry a 16-bit tag.
inline GrayImage tagged_image(int w, int h, std::uint16_t tag, std::uint8_t fill = 128) {
  GrayImage img(w, h, fill);
  img.at(0, 0) = static_cast<std::uint8_t>(tag >> 8);
  img.at(1, 0) = static_cast<std::uint8_t>(tag & 0xff);
  return img;
}

inline std::uint16_t image_tag(const GrayImage& img) {
  return static_cast<std::uint16_t>((img.at(0, 0) << 8) | img.at(1, 0));
}

inline Sleeper no_sleep() {
  return [](std::chrono::milliseconds) {};
}


/// Ten 640x480 images, one oil-spill box each, with replay-log entries in
/// which exactly seven responses reach IoU 0.5.
struct ReplayFixture {
  CocoDataset dataset;
  std::vector<json> entries;
};

inline ReplayFixture seven_of_ten_replay() {
  ReplayFixture f;
  f.dataset.categories.push_back({1, "oil-spill", json::object()});
  for (int i = 1; i <= 10; ++i) {
    f.dataset.images.push_back({i, "img" + std::to_string(i) + ".png", 640, 480, json::object()});
    CocoAnnotation a;
    a.id = 100 + i;
    a.image_id = i;
    a.category_id = 1;
    a.bbox = {100, 100, 200, 100};
    f.dataset.annotations.push_back(a);
    const std::array<double, 4> box = i <= 7 ? std::array<double, 4>{100, 100, 200, 100} : std::array<double, 4>{250, 150, 200, 100};
    const json response = json::array({{{"image_id", i}, {"category_id", 1}, {"bbox", box}, {"score", 0.9}}});
    f.entries.push_back({{"image_id", i}, {"class_id", 1}, {"method", "Zero-Shot"}, {"width", 640}, {"height", 480},
                         {"response", response.dump()}, {"status", "clean"}});
  }
  return f;
}

}  // namespace spillkit::testing
