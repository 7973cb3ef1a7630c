#pragma once

#include <bezgraph/scenario.hpp>
#include <bezgraph/sim.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace bezgraph
{
inline constexpr int kFrameVersion = 1;
inline constexpr const char* kFrameSchema = "bezgraph.frame";
inline constexpr const char* kCommandSchema = "bezgraph.command";
/// Above this many graph edges the frame carries a sample of alive edges.
inline constexpr std::size_t kEdgeDecimationThreshold = 10000;
inline constexpr std::size_t kEdgeSampleSize = 2000;

struct FrameOptions
{
  std::string session_id;
  /// Position samples per active MPC piece.
  int samples_per_piece = 4;
};

/// One published frame. Obstacles, mask, path and cut stats all come from
/// the same obstacle epoch.
Json buildFrame(const ClosedLoopSession& session, std::uint64_t seq, const FrameOptions& options);
Json endRecord(const std::string& session_id, std::uint64_t seq, const std::string& reason);

/// {"type": "move_obstacle" | "add_obstacle" | "remove_obstacle" |
///  "set_goal" | "pause" | "resume", ...}. Throws ScenarioError naming the
/// field.
Command commandFromJson(const Json& doc);
Json commandToJson(const Command& command);

/// "<byte length>\n<json>\n"
std::string encodeMessage(const Json& message);

/// Latest-wins mailbox: a slow reader sees only the newest frame and the
/// number of frames it missed.
class FrameMailbox
{
public:
  void publish(std::shared_ptr<const std::string> message, bool last);
  /// Blocks up to timeout_ms for a message newer than the last one taken.
  /// Returns nullptr on timeout or once the final message has been taken.
  std::shared_ptr<const std::string> take(int timeout_ms);
  bool closed() const;
  std::uint64_t dropped() const;

private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::shared_ptr<const std::string> pending_;
  bool last_pending_ = false;
  bool closed_ = false;
  std::uint64_t dropped_ = 0;
};

struct LiveOptions
{
  /// Simulated seconds per wall-clock second; 0 runs as fast as possible.
  double pace = 1.0;
  bool start_paused = false;
  FrameOptions frame;
};

/// Closed loop on its own thread. Commands are queued and handed to the
/// loop between MPC periods; frames fan out to subscriber mailboxes.
class LiveSession
{
public:
  LiveSession(std::string id, Scenario scenario, std::shared_ptr<const BezierGraph> graph,
              LiveOptions options);
  ~LiveSession();
  LiveSession(const LiveSession&) = delete;
  LiveSession& operator=(const LiveSession&) = delete;

  const std::string& id() const { return id_; }
  /// Validates and enqueues. Throws ScenarioError on an invalid command.
  void submit(const Command& command);
  std::shared_ptr<FrameMailbox> subscribe();
  void unsubscribe(const std::shared_ptr<FrameMailbox>& mailbox);
  /// Session metadata, the fixed graph vertices and the latest frame.
  Json snapshot() const;
  std::string status() const;
  void stop();
  bool ended() const { return ended_.load(); }
  std::uint64_t framesPublished() const { return seq_.load(); }

private:
  void run();
  void publish(const Json& frame, bool last);

  std::string id_;
  Scenario scenario_;
  std::shared_ptr<const BezierGraph> graph_;
  LiveOptions options_;
  std::unique_ptr<ClosedLoopSession> loop_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  struct Queued
  {
    Command command;
    std::promise<void> done;
  };
  std::vector<Queued> queue_;
  std::vector<std::shared_ptr<FrameMailbox>> subscribers_;
  std::shared_ptr<const Json> latest_;
  std::shared_ptr<const std::string> latest_encoded_;
  std::shared_ptr<const std::string> end_encoded_;
  std::string end_reason_;
  std::string status_ = "starting";
  bool stop_requested_ = false;
  std::atomic<bool> ended_{false};
  std::atomic<std::uint64_t> seq_{0};
  std::thread thread_;
};
}  // namespace bezgraph
