#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>

#include "spillkit/error.hpp"

namespace spillkit::http {

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string path;    // base path without trailing slash, may be empty

  static Endpoint parse(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(Errc::invalid_input, "endpoint URL needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint e;
    e.origin = url.substr(0, path_start);
    e.path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
    return e;
  }
};

struct Response {
  int status = 0;
  std::string body;
};

inline std::string api_key_from_env(const std::string& var) {
  if (var.empty()) return {};
  const char* v = std::getenv(var.c_str());
  return v ? std::string(v) : std::string();
}

/// Thin blocking JSON client. Connection-level failures raise
/// Errc::transport; HTTP status codes are returned to the caller.
class Client {
 public:
  Client(const std::string& url, std::string api_key = {}, std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : endpoint_(Endpoint::parse(url)), api_key_(std::move(api_key)), timeout_(timeout) {}

  const Endpoint& endpoint() const { return endpoint_; }

  Response post(const std::string& path, const std::string& body, const std::string& content_type = "application/json") {
    auto cli = make();
    auto res = cli->Post(endpoint_.path + path, headers(), body, content_type);
    return unwrap(res, "POST " + path);
  }

  Response get(const std::string& path) {
    auto cli = make();
    auto res = cli->Get(endpoint_.path + path, headers());
    return unwrap(res, "GET " + path);
  }

  /// GET against an absolute URL (artifact links returned by a backend).
  Response get_url(const std::string& url) {
    const Endpoint e = Endpoint::parse(url);
    httplib::Client cli(e.origin);
    configure(cli);
    auto res = cli.Get(e.path.empty() ? "/" : e.path, headers());
    return unwrap(res, "GET " + url);
  }

 private:
  std::unique_ptr<httplib::Client> make() const {
    auto cli = std::make_unique<httplib::Client>(endpoint_.origin);
    configure(*cli);
    return cli;
  }

  void configure(httplib::Client& cli) const {
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
  }

  httplib::Headers headers() const {
    httplib::Headers h;
    if (!api_key_.empty()) h.emplace("Authorization", "Bearer " + api_key_);
    return h;
  }

  Response unwrap(const httplib::Result& res, const std::string& what) const {
    if (!res) throw Error(Errc::transport, what + " to " + endpoint_.origin + " failed: " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }

  Endpoint endpoint_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

}  // namespace spillkit::http
