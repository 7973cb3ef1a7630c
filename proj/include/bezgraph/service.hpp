#pragma once

#include <bezgraph/session.hpp>

#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace httplib
{
class Server;
}

namespace bezgraph
{
struct ServiceOptions
{
  std::string host = "127.0.0.1";
  int port = 8080;
  /// Default pacing for new sessions; a request may override it.
  double pace = 1.0;
  /// Longest wait for a new frame before the stream re-checks the client.
  int stream_poll_ms = 1000;
};

/// HTTP front end over LiveSession:
///   POST /sessions                 scenario document or {"scenario", "pace", "paused"}
///   POST /sessions/{id}/commands   command document
///   GET  /sessions/{id}            snapshot
///   GET  /sessions/{id}/frames     length-delimited frame stream
///   DELETE /sessions/{id}
class Service
{
public:
  explicit Service(ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread. Returns the bound port
  /// (options.port == 0 picks a free one). Throws when binding fails.
  int start();
  /// Blocks serving on the calling thread.
  void listen();
  void stop();

  std::shared_ptr<LiveSession> session(const std::string& id) const;
  std::shared_ptr<LiveSession> create(const Scenario& scenario, const LiveOptions& options);

private:
  void routes();

  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<LiveSession>> sessions_;
  std::uint64_t next_id_ = 1;
  /// Graphs keyed by their scenario graph configuration.
  std::map<std::string, std::shared_ptr<const BezierGraph>> graphs_;
};

/// {"error": {"code", "field", "message"}} from an exception message of the
/// form "field: message".
Json errorBody(const std::string& code, const std::string& message);
}  // namespace bezgraph
