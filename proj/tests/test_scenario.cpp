#include <bezgraph/generators.hpp>
#include <bezgraph/scenario.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bezgraph;

namespace
{
std::string errorOf(const Json& doc)
{
  try
  {
    scenarioFromJson(doc);
  }
  catch (const ScenarioError& e)
  {
    return e.what();
  }
  catch (const std::exception& e)
  {
    return std::string("other: ") + e.what();
  }
  return {};
}
}  // namespace

TEST_CASE("scenario round trips through JSON")
{
  for (const Scenario& s : {deskScenario(), randomFieldScenario(3), cornerScenario(2),
                            movingObstacleScenario(1)})
  {
    const Json doc = scenarioToJson(s);
    CHECK(doc.at("schema") == kScenarioSchema);
    CHECK(doc.at("version") == kScenarioVersion);
    const Scenario back = scenarioFromJson(doc);
    CHECK(scenarioToJson(back) == doc);
    CHECK(back.obstacles.size() == s.obstacles.size());
    CHECK(back.mpc.weights.Fw == s.mpc.weights.Fw);
  }
}

TEST_CASE("maze scenario keeps its explicit lattice")
{
  const Scenario s = mazeScenario(1);
  CHECK(s.graph.vertices.cols() > 4000);
  CHECK(s.obstacles.size() == 300);
  const Scenario back = scenarioFromJson(scenarioToJson(s));
  CHECK(back.graph.vertices == s.graph.vertices);
}

TEST_CASE("file save and load")
{
  const auto path = std::filesystem::temp_directory_path() / "bezgraph_scenario_test.json";
  const Scenario s = randomFieldScenario(9);
  saveScenario(s, path.string());
  CHECK(scenarioToJson(loadScenario(path.string())) == scenarioToJson(s));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(loadScenario(path.string()), ScenarioError);
}

TEST_CASE("errors name the offending field")
{
  const Json good = scenarioToJson(deskScenario());

  Json d = good;
  d.erase("version");
  CHECK(errorOf(d).rfind("version: missing", 0) == 0);

  d = good;
  d["version"] = 7;
  CHECK(errorOf(d).rfind("version:", 0) == 0);

  d = good;
  d["schema"] = "other";
  CHECK(errorOf(d).rfind("schema:", 0) == 0);

  d = good;
  d["U"]["lo"] = "x";
  CHECK(errorOf(d).rfind("U", 0) == 0);

  d = good;
  d["graph"]["N"] = 2.5;
  CHECK(errorOf(d).rfind("graph.N: expected an integer", 0) == 0);

  d = good;
  d["obstacles"] = Json::array({{{"A", {{1, 0}, {0, 1}, {-1, 0}}}, {"b", {1, 1}}}});
  CHECK(errorOf(d).rfind("obstacles[0]", 0) == 0);

  d = good;
  d["start"] = {1, 2, 3};
  CHECK(errorOf(d).rfind("start", 0) == 0);

  d = good;
  d["rates"]["sim_hz"] = "fast";
  CHECK(errorOf(d).rfind("rates.sim_hz: expected a number", 0) == 0);
}

TEST_CASE("graph export layout")
{
  Scenario s = deskScenario();
  s.graph.N = 60;
  const auto g = buildScenarioGraph(s);
  const Json j = graphToJson(*g);
  REQUIRE(j.at("vertices").size() == static_cast<std::size_t>(g->numVertices()));
  REQUIRE(j.at("edges").size() == static_cast<std::size_t>(g->numEdges()));
  CHECK(j.at("vertices")[0].size() == 4);
  if (g->numEdges() > 0)
  {
    const Json& e = j.at("edges")[0];
    CHECK(e.size() == 3);
    CHECK(e[0] == g->edges[0].from);
    CHECK(e[1] == g->edges[0].to);
    CHECK(e[2].get<double>() == g->edges[0].cost);
  }
}

TEST_CASE("mask bitset is least significant bit first")
{
  CutMask mask;
  mask.alive = {1, 0, 0, 0, 0, 0, 0, 0, 0, 1};
  mask.provenance.assign(10, Provenance::QpSafe);
  mask.provenance[1] = Provenance::HeuristicUnsafe;
  const Json j = maskToJson(mask);
  CHECK(j.at("alive_bitset") == "0102");
  CHECK(j.at("alive_count") == 2);
  CHECK(j.at("provenance_counts").at("qp_safe") == 9);
}

TEST_CASE("trace export writes one line per step")
{
  ClosedLoopTrace trace;
  for (int k = 0; k < 3; ++k)
  {
    TraceSample s;
    s.t = 0.01 * k;
    s.x = Vec::Zero(4);
    s.x_nominal = Vec::Zero(4);
    s.u = Vec::Zero(2);
    s.w = Vec::Zero(2);
    trace.samples.push_back(s);
  }
  trace.summary.steps = 3;
  std::ostringstream out;
  writeTraceJsonLines(trace, out);
  std::istringstream in(out.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line))
  {
    const Json j = Json::parse(line);
    CHECK(j.contains("x"));
    CHECK(j.contains("collision"));
    ++lines;
  }
  CHECK(lines == 3);
  const Json summary = traceSummaryToJson(trace);
  CHECK(summary.at("steps") == 3);
  CHECK(summary.at("goal_time").is_null());
}
