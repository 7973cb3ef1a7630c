#include <bezgraph/generators.hpp>
#include <bezgraph/session.hpp>

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>

using namespace bezgraph;

namespace
{
const std::filesystem::path kGolden = std::filesystem::path(BEZGRAPH_SOURCE_DIR) / "tests" / "golden";

Vec v2(double x, double y)
{
  Vec v(2);
  v << x, y;
  return v;
}

Scenario goldenScenario()
{
  Scenario s = deskScenario();
  s.name = "golden";
  s.graph.N = 600;
  s.graph.seed = 2;
  s.sim.disturbance_seed = 3;
  s.obstacles.push_back({Polytope::fromBox(Box(v2(4, 4), v2(6, 6))), {}, {}});
  return s;
}

// Same keys, same types, same array lengths and numbers within tolerance.
void compareJson(const Json& got, const Json& want, const std::string& path)
{
  CAPTURE(path);
  if (want.is_number())
  {
    REQUIRE(got.is_number());
    const double a = got.get<double>();
    const double b = want.get<double>();
    CHECK(std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(b)));
    return;
  }
  REQUIRE(got.type() == want.type());
  if (want.is_object())
  {
    for (const auto& [k, v] : want.items())
    {
      REQUIRE_MESSAGE(got.contains(k), "missing key " << k);
      compareJson(got.at(k), v, path + "." + k);
    }
    for (const auto& [k, v] : got.items())
    {
      CHECK_MESSAGE(want.contains(k), "unexpected key " << k);
    }
  }
  else if (want.is_array())
  {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
    {
      compareJson(got[i], want[i], path + "[" + std::to_string(i) + "]");
    }
  }
  else
  {
    CHECK(got == want);
  }
}

void checkGolden(const Json& got, const std::string& name)
{
  const auto file = kGolden / name;
  if (std::getenv("BEZGRAPH_UPDATE_GOLDEN"))
  {
    std::filesystem::create_directories(kGolden);
    std::ofstream(file) << std::setw(1) << got << "\n";
  }
  std::ifstream in(file);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << file.string());
  compareJson(got, Json::parse(in), name);
}

Json parseMessage(const std::string& msg)
{
  const auto nl = msg.find('\n');
  REQUIRE(nl != std::string::npos);
  const std::size_t len = std::stoul(msg.substr(0, nl));
  REQUIRE(msg.size() == nl + 1 + len + 1);
  CHECK(msg.back() == '\n');
  return Json::parse(msg.substr(nl + 1, len));
}
}  // namespace

TEST_CASE("frame layout matches the golden file")
{
  const Scenario s = goldenScenario();
  ClosedLoopSession loop(s, buildScenarioGraph(s));
  loop.prepare();
  for (int k = 0; k < 5; ++k)
  {
    loop.advance();
  }
  FrameOptions opts;
  opts.session_id = "golden";
  const Json frame = buildFrame(loop, 5, opts);
  CHECK(frame.at("schema") == kFrameSchema);
  CHECK(frame.at("version") == kFrameVersion);
  CHECK(frame.at("edges").at("decimated") == false);
  CHECK(frame.at("obstacles").at(0).at("vertices").size() == 4);
  checkGolden(frame, "frame_v1.json");
  checkGolden(endRecord("golden", 6, "goal_reached"), "end_v1.json");
}

TEST_CASE("command documents match the golden file")
{
  Json docs = Json::array();
  Command c;
  c.kind = Command::Kind::MoveObstacle;
  c.obstacle = 0;
  c.offset = v2(0.5, -0.25);
  docs.push_back(commandToJson(c));
  c = Command{};
  c.kind = Command::Kind::AddObstacle;
  c.shape = Polytope::fromBox(Box(v2(1, 1), v2(2, 2)));
  docs.push_back(commandToJson(c));
  c = Command{};
  c.kind = Command::Kind::RemoveObstacle;
  c.obstacle = 1;
  docs.push_back(commandToJson(c));
  c = Command{};
  c.kind = Command::Kind::SetGoal;
  c.goal = v2(8, 2);
  docs.push_back(commandToJson(c));
  docs.push_back(commandToJson(Command{Command::Kind::Pause, -1, {}, {}, {}}));
  docs.push_back(commandToJson(Command{Command::Kind::Resume, -1, {}, {}, {}}));
  checkGolden(docs, "commands_v1.json");
  for (const Json& d : docs)
  {
    CHECK(commandToJson(commandFromJson(d)) == d);
  }
}

TEST_CASE("command parsing names the bad field")
{
  const auto err = [](const Json& doc) {
    try
    {
      commandFromJson(doc);
    }
    catch (const ScenarioError& e)
    {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(err(Json::array()).rfind("command:", 0) == 0);
  CHECK(err({{"kind", "pause"}}).rfind("type: missing", 0) == 0);
  CHECK(err({{"type", "fly"}}).rfind("type: unknown", 0) == 0);
  CHECK(err({{"type", "move_obstacle"}, {"offset", {1, 2}}}).rfind("obstacle: missing", 0) == 0);
  CHECK(err({{"type", "move_obstacle"}, {"obstacle", "a"}, {"offset", {1, 2}}}).rfind("obstacle:", 0) == 0);
  CHECK(err({{"type", "set_goal"}, {"goal", "x"}}).rfind("goal", 0) == 0);
  CHECK(err({{"type", "pause"}, {"schema", "nope"}}).rfind("schema:", 0) == 0);
  CHECK(err({{"type", "pause"}, {"schema", kCommandSchema}}).empty());
}

TEST_CASE("messages are length prefixed")
{
  const Json j = {{"a", 1}};
  const std::string msg = encodeMessage(j);
  CHECK(msg == "7\n{\"a\":1}\n");
  CHECK(parseMessage(msg) == j);
}

TEST_CASE("mailbox keeps only the newest frame")
{
  FrameMailbox box;
  CHECK(box.take(1) == nullptr);
  for (int k = 0; k < 3; ++k)
  {
    box.publish(std::make_shared<const std::string>(std::to_string(k)), false);
  }
  auto got = box.take(10);
  REQUIRE(got);
  CHECK(*got == "2");
  CHECK(box.dropped() == 2);
  box.publish(std::make_shared<const std::string>("end"), true);
  box.publish(std::make_shared<const std::string>("late"), false);
  got = box.take(10);
  REQUIRE(got);
  CHECK(*got == "end");
  CHECK(box.closed());
  CHECK(box.take(1) == nullptr);
}

TEST_CASE("live session streams increasing frames and ends with a record")
{
  Scenario s = goldenScenario();
  LiveOptions opts;
  opts.pace = 0.0;
  opts.start_paused = true;
  auto live = std::make_shared<LiveSession>("t1", s, buildScenarioGraph(s), opts);
  auto box = live->subscribe();
  auto first = box->take(1000);
  REQUIRE(first);
  const Json f0 = parseMessage(*first);
  CHECK(f0.at("seq") == 0);
  CHECK(f0.at("status") == "paused");

  Command bad;
  bad.kind = Command::Kind::RemoveObstacle;
  bad.obstacle = 9;
  CHECK_THROWS_AS(live->submit(bad), ScenarioError);
  live->submit(Command{Command::Kind::Resume, -1, {}, {}, {}});

  std::int64_t last_seq = 0;
  Json end;
  for (int k = 0; k < 100000; ++k)
  {
    auto msg = box->take(5000);
    REQUIRE(msg);
    const Json j = parseMessage(*msg);
    CHECK(j.at("seq").get<std::int64_t>() > last_seq);
    last_seq = j.at("seq").get<std::int64_t>();
    if (j.at("type") == "end")
    {
      end = j;
      break;
    }
    CHECK(j.at("schema") == kFrameSchema);
  }
  REQUIRE(end.is_object());
  CHECK(end.at("reason") == "goal_reached");
  CHECK(box->closed());
  CHECK(live->ended());
  CHECK(live->status() == "ended");
  const Json snap = live->snapshot();
  CHECK(snap.at("end_reason") == "goal_reached");
  CHECK(snap.at("graph").at("vertices").size() == 602);
  CHECK(snap.at("latest").at("status") == "goal_reached");
  CHECK_THROWS_AS(live->submit(Command{Command::Kind::Pause, -1, {}, {}, {}}), ScenarioError);

  auto late = live->subscribe();
  auto msg = late->take(10);
  REQUIRE(msg);
  CHECK(parseMessage(*msg).at("type") == "end");
}

TEST_CASE("stopping a paused session ends the stream")
{
  Scenario s = goldenScenario();
  LiveOptions opts;
  opts.start_paused = true;
  LiveSession live("t2", s, buildScenarioGraph(s), opts);
  auto box = live.subscribe();
  Command move;
  move.kind = Command::Kind::MoveObstacle;
  move.obstacle = 0;
  move.offset = v2(1, 0);
  live.submit(move);
  live.stop();
  std::string reason;
  while (auto msg = box->take(1000))
  {
    const Json j = parseMessage(*msg);
    if (j.at("type") == "end")
    {
      reason = j.at("reason");
    }
  }
  CHECK(reason == "stopped");
}
