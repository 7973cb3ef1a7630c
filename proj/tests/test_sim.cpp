#include <bezgraph/generators.hpp>
#include <bezgraph/scenario.hpp>
#include <bezgraph/sim.hpp>

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace bezgraph;

namespace
{
Vec v2(double x, double y)
{
  Vec v(2);
  v << x, y;
  return v;
}

Scenario smallDesk()
{
  Scenario s = deskScenario();
  s.graph.N = 500;
  s.graph.seed = 4;
  s.obstacles.push_back({Polytope::fromBox(Box(v2(4, 3), v2(5.5, 7))), {}, {}});
  s.sim.timeout = 30.0;
  return s;
}
}  // namespace

TEST_CASE("plant step matches the double integrator")
{
  Vec x(4);
  x << 1, 2, -0.5, 0.25;
  const Vec u = v2(1.0, -2.0);
  const Vec w = v2(0.03, 0.01);
  CHECK((step(2, 2, x, u, w, 0.01) - oracle::doubleIntegratorStep(x, u + w, 0.01)).norm() < 1e-14);
}

TEST_CASE("tracking controller is feedforward plus state feedback")
{
  const std::vector<double> gains{25.0, 10.0};
  const Mat K = integratorGains(2, gains);
  CHECK(K.rows() == 2);
  CHECK(K.cols() == 4);
  Vec x(4), xd(4);
  x << 1, 1, 0, 0;
  xd << 1.1, 1, 0.2, 0;
  const Vec u = trackingController(x, xd, v2(0.5, 0.0), K);
  CHECK(u(0) == doctest::Approx(0.5 + 25 * 0.1 + 10 * 0.2));
  CHECK(u(1) == doctest::Approx(0.0));
}

TEST_CASE("sampled feedback stays inside the computed tube")
{
  const std::vector<double> gains{25.0, 10.0};
  const Mat K = integratorGains(2, gains);
  const double w_max = 0.05;
  const double dt = 0.01;
  const TrackingTube tube = computeTube(2, 2, K, w_max, dt);
  CHECK(tube.state_error.contains(Vec::Zero(4)));
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> uw(-w_max, w_max);
  const Vec xd = Vec::Zero(4);
  double worst = 0.0;
  for (int run = 0; run < 50; ++run)
  {
    Vec x = Vec::Zero(4);
    for (int k = 0; k < 500; ++k)
    {
      const Vec u = trackingController(x, xd, Vec::Zero(2), K);
      const Vec w = v2(uw(rng), uw(rng));
      x = step(2, 2, x, u, w, dt);
      CHECK(tube.state_error.contains(x, 0.0));
      worst = std::max(worst, (x.cwiseAbs().array() / tube.state_error.hi.array()).maxCoeff());
      CHECK(tube.input_margin.contains(K * x, 0.0));
    }
  }
  CHECK(worst > 0.05);
  const std::vector<double> unstable{-1.0, 0.0};
  CHECK_THROWS(computeTube(2, 2, integratorGains(2, unstable), w_max, dt));
}

TEST_CASE("moving obstacle interpolates its waypoints and sweeps them")
{
  MovingObstacle o{Polytope::fromBox(Box(v2(0, 0), v2(1, 1))), {0.0, 2.0}, {v2(0, 0), v2(4, 0)}};
  CHECK(o.moving());
  CHECK(contains(o.at(1.0), v2(2.5, 0.5)));
  CHECK_FALSE(contains(o.at(1.0), v2(0.5, 0.5)));
  CHECK(contains(o.at(10.0), v2(4.5, 0.5)));
  CHECK(contains(o.at(-1.0), v2(0.5, 0.5)));
  const Polytope sw = o.sweep(0.5, 1.5);
  const Box bb = boundingBox(sw);
  CHECK(bb.lo(0) == doctest::Approx(1.0));
  CHECK(bb.hi(0) == doctest::Approx(4.0));
}

TEST_CASE("closed loop reaches the goal without violations and is repeatable")
{
  const Scenario s = smallDesk();
  const auto graph = buildScenarioGraph(s);
  const ClosedLoopTrace a = runClosedLoop(s, graph);
  CHECK(a.summary.success);
  CHECK(a.summary.collisions == 0);
  CHECK(a.summary.state_violations == 0);
  CHECK(a.summary.input_violations == 0);
  CHECK(a.summary.tube_violations == 0);
  REQUIRE(a.summary.goal_time);
  CHECK(*a.summary.goal_time < s.sim.timeout);
  const Vec last = a.samples.back().x;
  CHECK((last.head(2) - s.goal.head(2)).norm() < 0.3);

  const ClosedLoopTrace b = runClosedLoop(s, graph);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t k = 0; k < a.samples.size(); ++k)
  {
    CHECK(a.samples[k].x == b.samples[k].x);
  }
}

TEST_CASE("plan once gives a path whose reference starts at the start")
{
  const Scenario s = smallDesk();
  const auto graph = buildScenarioGraph(s);
  const PlanResult plan = planOnce(s, *graph);
  REQUIRE(plan.path);
  REQUIRE_FALSE(plan.reference.empty());
  CHECK(plan.tube.state_error.contains(plan.reference.front() - s.start));
  for (int e : plan.path->edges)
  {
    CHECK(plan.mask.alive[e]);
  }
  REQUIRE(plan.refined);
  CHECK(plan.refined->verified);
}

TEST_CASE("session commands are validated and applied at cycle boundaries")
{
  Scenario s = smallDesk();
  s.sim.stop_at_goal = false;
  ClosedLoopSession session(s, buildScenarioGraph(s));
  session.prepare();
  const auto epoch0 = session.snapshotEpoch();

  Command bad;
  bad.kind = Command::Kind::MoveObstacle;
  bad.obstacle = 5;
  bad.offset = v2(0, 0);
  CHECK_THROWS_AS(session.apply(bad), ScenarioError);
  bad.obstacle = 0;
  bad.offset = v2(100, 0);
  CHECK_THROWS_AS(session.apply(bad), ScenarioError);

  Command pause;
  pause.kind = Command::Kind::Pause;
  session.apply(pause);
  CHECK(session.paused());
  Command resume;
  resume.kind = Command::Kind::Resume;
  session.apply(resume);
  CHECK_FALSE(session.paused());

  Command move;
  move.kind = Command::Kind::MoveObstacle;
  move.obstacle = 0;
  move.offset = v2(-2.0, 0.0);
  session.apply(move);
  for (int k = 0; k < 10 && session.snapshotEpoch() == epoch0; ++k)
  {
    session.advance();
  }
  CHECK(session.snapshotEpoch() > epoch0);
  CHECK(contains(session.currentObstacles()[0], v2(2.5, 5.0)));

  Command goal;
  goal.kind = Command::Kind::SetGoal;
  goal.goal = v2(20, 20);
  CHECK_THROWS_AS(session.apply(goal), ScenarioError);
  goal.goal = v2(8, 2);
  session.apply(goal);
  for (int k = 0; k < 10; ++k)
  {
    session.advance();
  }
  // The goal snaps to the nearest stationary vertex.
  CHECK(isStationary(session.goal(), 2));
  double best = INFINITY;
  for (int v = 0; v < session.graph().numVertices(); ++v)
  {
    if (isStationary(session.graph().vertex(v), 2))
    {
      best = std::min(best, (session.graph().vertex(v).head(2) - v2(8, 2)).norm());
    }
  }
  CHECK((session.goal().head(2) - v2(8, 2)).norm() == doctest::Approx(best));
}
