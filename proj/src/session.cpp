#include <bezgraph/session.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace bezgraph
{
namespace
{
[[noreturn]] void fail(const std::string& field, const std::string& message)
{
  throw ScenarioError(field + ": " + message);
}

const Json& require(const Json& doc, const char* key)
{
  if (!doc.contains(key))
  {
    fail(key, "missing");
  }
  return doc.at(key);
}

int obstacleIndex(const Json& doc)
{
  const Json& j = require(doc, "obstacle");
  if (!j.is_number_integer())
  {
    fail("obstacle", "expected an integer index");
  }
  return j.get<int>();
}

/// Counter-clockwise outline of a planar polytope.
Json outline(const Polytope& p)
{
  Json pts = Json::array();
  if (p.dim() != 2)
  {
    return pts;
  }
  std::vector<Vec> v = enumerateVertices(p);
  if (v.empty())
  {
    return pts;
  }
  Vec c = Vec::Zero(2);
  for (const auto& x : v)
  {
    c += x;
  }
  c /= static_cast<double>(v.size());
  std::sort(v.begin(), v.end(), [&](const Vec& a, const Vec& b) {
    return std::atan2(a(1) - c(1), a(0) - c(0)) < std::atan2(b(1) - c(1), b(0) - c(0));
  });
  for (const auto& x : v)
  {
    pts.push_back(vecToJson(x));
  }
  return pts;
}

std::string loopStatus(const ClosedLoopSession& s)
{
  if (s.finished())
  {
    return s.goalReached() ? "goal_reached" : "timeout";
  }
  return s.paused() ? "paused" : "running";
}
}  // namespace

Json buildFrame(const ClosedLoopSession& s, std::uint64_t seq, const FrameOptions& options)
{
  const BezierGraph& graph = s.graph();
  const CutMask& mask = s.mask();
  const int m = s.scenario().spec.m;

  Json obstacles = Json::array();
  for (const auto& o : s.currentObstacles())
  {
    Json j = polytopeToJson(o);
    j["vertices"] = outline(o);
    obstacles.push_back(j);
  }

  std::vector<int> alive;
  alive.reserve(mask.alive.size());
  for (std::size_t e = 0; e < mask.alive.size(); ++e)
  {
    if (mask.alive[e])
    {
      alive.push_back(static_cast<int>(e));
    }
  }
  const bool decimated = static_cast<std::size_t>(graph.numEdges()) > kEdgeDecimationThreshold;
  Json sample = Json::array();
  const std::size_t count = decimated ? std::min(alive.size(), kEdgeSampleSize) : alive.size();
  for (std::size_t k = 0; k < count; ++k)
  {
    const std::size_t idx = decimated ? k * alive.size() / count : k;
    const Edge& e = graph.edges[static_cast<std::size_t>(alive[idx])];
    sample.push_back({e.from, e.to});
  }

  Json path_ids = Json::array();
  Json path_pos = Json::array();
  for (int v : s.pathVertices())
  {
    path_ids.push_back(v);
    path_pos.push_back(vecToJson(graph.vertices.col(v).head(m)));
  }

  Json refined = Json::array();
  const std::vector<Vec>& planned = s.plannedStates();
  if (planned.size() >= 2)
  {
    const BezierSpec step = s.scenario().spec.withDuration(s.scenario().mpc.h);
    const auto pieces = piecesFor(step, planned);
    const int k = std::max(1, options.samples_per_piece);
    for (std::size_t p = 0; p < pieces.size(); ++p)
    {
      for (int i = (p == 0 ? 0 : 1); i <= k; ++i)
      {
        refined.push_back(vecToJson(pieces[p].evaluate(step.duration * i / k).head(m)));
      }
    }
  }

  return {
      {"schema", kFrameSchema},
      {"version", kFrameVersion},
      {"type", "frame"},
      {"session", options.session_id},
      {"seq", seq},
      {"tick", s.cycle()},
      {"epoch", s.snapshotEpoch()},
      {"time", s.time()},
      {"status", loopStatus(s)},
      {"goal_reached", s.goalReached()},
      {"state", vecToJson(s.state())},
      {"nominal", vecToJson(s.nominal())},
      {"goal", vecToJson(s.goal())},
      {"obstacles", obstacles},
      {"edges",
       {{"total", graph.numEdges()},
        {"alive", alive.size()},
        {"decimated", decimated},
        {"sample", sample}}},
      {"path", {{"vertices", path_ids}, {"positions", path_pos}}},
      {"refined", {{"samples", refined}}},
      {"cut", cutStatsToJson(s.lastCutStats())},
      {"mpc", {{"status", s.mpcStatus()}}},
  };
}

Json endRecord(const std::string& session_id, std::uint64_t seq, const std::string& reason)
{
  return {{"schema", kFrameSchema}, {"version", kFrameVersion}, {"type", "end"},
          {"session", session_id},  {"seq", seq},                {"reason", reason}};
}

Command commandFromJson(const Json& doc)
{
  if (!doc.is_object())
  {
    fail("command", "expected an object");
  }
  if (doc.contains("schema") && doc.at("schema") != kCommandSchema)
  {
    fail("schema", std::string("expected \"") + kCommandSchema + "\"");
  }
  const Json& type = require(doc, "type");
  if (!type.is_string())
  {
    fail("type", "expected a string");
  }
  const std::string t = type.get<std::string>();
  Command c;
  if (t == "move_obstacle")
  {
    c.kind = Command::Kind::MoveObstacle;
    c.obstacle = obstacleIndex(doc);
    c.offset = vecFromJson(require(doc, "offset"), "offset");
  }
  else if (t == "add_obstacle")
  {
    c.kind = Command::Kind::AddObstacle;
    c.shape = polytopeFromJson(require(doc, "shape"), "shape");
  }
  else if (t == "remove_obstacle")
  {
    c.kind = Command::Kind::RemoveObstacle;
    c.obstacle = obstacleIndex(doc);
  }
  else if (t == "set_goal")
  {
    c.kind = Command::Kind::SetGoal;
    c.goal = vecFromJson(require(doc, "goal"), "goal");
  }
  else if (t == "pause")
  {
    c.kind = Command::Kind::Pause;
  }
  else if (t == "resume")
  {
    c.kind = Command::Kind::Resume;
  }
  else
  {
    fail("type", "unknown command \"" + t + "\"");
  }
  return c;
}

Json commandToJson(const Command& c)
{
  switch (c.kind)
  {
    case Command::Kind::MoveObstacle:
      return {{"type", "move_obstacle"}, {"obstacle", c.obstacle}, {"offset", vecToJson(c.offset)}};
    case Command::Kind::AddObstacle:
      return {{"type", "add_obstacle"}, {"shape", polytopeToJson(c.shape)}};
    case Command::Kind::RemoveObstacle:
      return {{"type", "remove_obstacle"}, {"obstacle", c.obstacle}};
    case Command::Kind::SetGoal:
      return {{"type", "set_goal"}, {"goal", vecToJson(c.goal)}};
    case Command::Kind::Pause:
      return {{"type", "pause"}};
    case Command::Kind::Resume:
      return {{"type", "resume"}};
  }
  return {};
}

std::string encodeMessage(const Json& message)
{
  const std::string body = message.dump();
  return std::to_string(body.size()) + "\n" + body + "\n";
}

void FrameMailbox::publish(std::shared_ptr<const std::string> message, bool last)
{
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (closed_ || last_pending_)
    {
      return;
    }
    if (pending_)
    {
      ++dropped_;
    }
    pending_ = std::move(message);
    last_pending_ = last;
  }
  cv_.notify_all();
}

std::shared_ptr<const std::string> FrameMailbox::take(int timeout_ms)
{
  std::unique_lock<std::mutex> lock(mutex_);
  cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
               [&] { return pending_ != nullptr || closed_; });
  if (!pending_)
  {
    return nullptr;
  }
  auto out = std::move(pending_);
  pending_.reset();
  if (last_pending_)
  {
    closed_ = true;
  }
  return out;
}

bool FrameMailbox::closed() const
{
  std::lock_guard<std::mutex> lock(mutex_);
  return closed_;
}

std::uint64_t FrameMailbox::dropped() const
{
  std::lock_guard<std::mutex> lock(mutex_);
  return dropped_;
}

LiveSession::LiveSession(std::string id, Scenario scenario,
                         std::shared_ptr<const BezierGraph> graph, LiveOptions options)
    : id_(std::move(id)),
      scenario_(std::move(scenario)),
      graph_(graph ? std::move(graph) : buildScenarioGraph(scenario_)),
      options_(std::move(options))
{
  options_.frame.session_id = id_;
  loop_ = std::make_unique<ClosedLoopSession>(scenario_, graph_);
  if (options_.start_paused)
  {
    loop_->apply(Command{Command::Kind::Pause, -1, {}, {}, {}});
  }
  loop_->prepare();
  publish(buildFrame(*loop_, seq_++, options_.frame), false);
  thread_ = std::thread([this] { run(); });
}

LiveSession::~LiveSession() { stop(); }

void LiveSession::stop()
{
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stop_requested_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable())
  {
    thread_.join();
  }
}

void LiveSession::submit(const Command& command)
{
  std::future<void> done;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (ended_.load())
    {
      throw ScenarioError("session: ended");
    }
    queue_.push_back(Queued{command, {}});
    done = queue_.back().done.get_future();
  }
  cv_.notify_all();
  if (done.wait_for(std::chrono::seconds(30)) != std::future_status::ready)
  {
    throw std::runtime_error("session: command not processed in time");
  }
  done.get();
}

std::shared_ptr<FrameMailbox> LiveSession::subscribe()
{
  auto box = std::make_shared<FrameMailbox>();
  std::lock_guard<std::mutex> lock(mutex_);
  if (end_encoded_)
  {
    box->publish(end_encoded_, true);
    return box;
  }
  if (latest_encoded_)
  {
    box->publish(latest_encoded_, false);
  }
  subscribers_.push_back(box);
  return box;
}

void LiveSession::unsubscribe(const std::shared_ptr<FrameMailbox>& mailbox)
{
  std::lock_guard<std::mutex> lock(mutex_);
  subscribers_.erase(std::remove(subscribers_.begin(), subscribers_.end(), mailbox),
                     subscribers_.end());
}

std::string LiveSession::status() const
{
  std::lock_guard<std::mutex> lock(mutex_);
  return status_;
}

Json LiveSession::snapshot() const
{
  Json vertices = Json::array();
  for (int v = 0; v < graph_->numVertices(); ++v)
  {
    vertices.push_back(vecToJson(graph_->vertices.col(v)));
  }
  std::lock_guard<std::mutex> lock(mutex_);
  return {
      {"id", id_},
      {"status", status_},
      {"name", scenario_.name},
      {"frames", seq_.load()},
      {"end_reason", end_reason_.empty() ? Json() : Json(end_reason_)},
      {"scene_bounds", boxToJson(scenario_.scene_bounds)},
      {"graph", {{"vertices", vertices}, {"edges", graph_->numEdges()}, {"T", graph_->spec.duration}}},
      {"latest", latest_ ? *latest_ : Json()},
  };
}

void LiveSession::publish(const Json& frame, bool last)
{
  auto encoded = std::make_shared<const std::string>(encodeMessage(frame));
  std::vector<std::shared_ptr<FrameMailbox>> targets;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (last)
    {
      end_encoded_ = encoded;
      end_reason_ = frame.value("reason", "");
      status_ = "ended";
    }
    else
    {
      latest_ = std::make_shared<const Json>(frame);
      latest_encoded_ = encoded;
      status_ = frame.value("status", "running");
    }
    targets = subscribers_;
  }
  for (const auto& box : targets)
  {
    box->publish(encoded, last);
  }
}

void LiveSession::run()
{
  using Clock = std::chrono::steady_clock;
  auto wall0 = Clock::now();
  double sim0 = loop_->time();
  std::string reason;
  try
  {
    while (true)
    {
      std::vector<Queued> work;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        if (loop_->paused() && !stop_requested_ && queue_.empty())
        {
          cv_.wait(lock, [&] { return stop_requested_ || !queue_.empty(); });
        }
        if (stop_requested_)
        {
          reason = "stopped";
          break;
        }
        work.swap(queue_);
      }
      const bool was_paused = loop_->paused();
      for (auto& q : work)
      {
        try
        {
          loop_->apply(q.command);
          q.done.set_value();
        }
        catch (...)
        {
          q.done.set_exception(std::current_exception());
        }
      }
      if (loop_->paused() != was_paused)
      {
        std::lock_guard<std::mutex> lock(mutex_);
        status_ = loop_->paused() ? "paused" : "running";
      }
      if (loop_->paused())
      {
        continue;
      }
      if (was_paused)
      {
        wall0 = Clock::now();
        sim0 = loop_->time();
      }
      const bool more = loop_->advance();
      publish(buildFrame(*loop_, seq_++, options_.frame), false);
      if (!more)
      {
        reason = loop_->goalReached() ? "goal_reached" : "timeout";
        break;
      }
      if (options_.pace > 0.0)
      {
        const auto due = wall0 + std::chrono::duration_cast<Clock::duration>(
                                     std::chrono::duration<double>((loop_->time() - sim0) /
                                                                   options_.pace));
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait_until(lock, due, [&] { return stop_requested_; });
      }
    }
  }
  catch (const std::exception& e)
  {
    reason = std::string("error: ") + e.what();
  }
  std::vector<Queued> leftover;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    ended_.store(true);
    leftover.swap(queue_);
  }
  for (auto& q : leftover)
  {
    q.done.set_exception(std::make_exception_ptr(ScenarioError("session: ended")));
  }
  publish(endRecord(id_, seq_++, reason), true);
}
}  // namespace bezgraph
