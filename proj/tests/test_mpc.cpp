#include <bezgraph/mpc.hpp>

#include "oracles.hpp"

#include <doctest.h>

using namespace bezgraph;

namespace
{
Vec s4(double a, double b, double c, double d)
{
  Vec x(4);
  x << a, b, c, d;
  return x;
}

ReachOracle oracleFor(double T)
{
  const BezierSpec spec = BezierSpec::boundaryValue(2, 2, T);
  Vec e(4);
  e << 0.1, 0.1, 0.05, 0.05;
  return buildOracle(spec, Polytope::fromBox(Box(s4(0, 0, -2, -2), s4(10, 10, 2, 2))),
                     Box::symmetric(Vec::Constant(2, 4.0)),
                     {Box::symmetric(e), Box::symmetric(Vec::Constant(2, 0.5))});
}

Polytope obstacle()
{
  Vec lo(2), hi(2);
  lo << 1.3, 1.4;
  hi << 1.6, 1.8;
  return Polytope::fromBox(Box(lo, hi));
}
}  // namespace

TEST_CASE("zero-order hold matches the double integrator")
{
  const BezierSpec spec = BezierSpec::boundaryValue(2, 2, 1.0);
  const Discretization d = discretize(spec, 0.1);
  const Vec x = s4(1, 2, 0.5, -0.3);
  Vec a(2);
  a << 0.7, -1.1;
  CHECK((d.A * x + d.B * a - oracle::doubleIntegratorStep(x, a, 0.1)).norm() < 1e-14);
}

TEST_CASE("Bernstein discretization reproduces boundary-value curves")
{
  const double h = 0.1;
  const BezierSpec spec = BezierSpec::boundaryValue(2, 2, h);
  const Discretization d = discretizeBernstein(spec, h);
  CHECK(d.B.cols() == 4);
  const Vec x0 = s4(1, 1, 0.3, -0.2);
  const Vec x1 = s4(1.05, 0.98, 0.6, -0.1);
  const Mat P = oracle::hermitePoints(x0, x1, h);
  const Mat acc = oracle::derivativePoints(P, h, 2);
  Vec u(4);
  u << acc.col(0), acc.col(1);
  CHECK((d.A * x0 + d.B * u - x1).norm() < 1e-12);
}

TEST_CASE("reference samples the path curves every h")
{
  const BezierSpec spec = BezierSpec::boundaryValue(2, 2, 1.0);
  const std::vector<Vec> path{s4(1, 1, 0, 0), s4(1.4, 1.1, 0.4, 0.1), s4(1.8, 1.2, 0, 0)};
  const auto ref = buildReference(path, spec, 0.1);
  REQUIRE(ref.size() == 21);
  CHECK(ref.front() == path[0]);
  CHECK(ref[10] == path[1]);
  CHECK(ref.back() == path[2]);
  const Mat P = oracle::hermitePoints(path[0], path[1], 1.0);
  CHECK((ref[3].head(2) - oracle::bezierPoint(P, 1.0, 0.3)).norm() < 1e-12);
  CHECK((ref[3].tail(2) - oracle::bezierPoint(oracle::derivativePoints(P, 1.0, 1), 1.0, 0.3))
            .norm() < 1e-12);
  CHECK(buildReference(std::span(path).first(1), spec, 0.1).size() == 1);
  CHECK_THROWS_AS(buildReference(path, spec, 0.3), MpcError);
  CHECK_THROWS_AS(buildReference({}, spec, 0.1), MpcError);
}

TEST_CASE("padding holds stationary states only")
{
  std::vector<Vec> ref{s4(0, 0, 1, 0), s4(1, 1, 0, 0)};
  CHECK(padReference(ref, 5, 2).size() == 5);
  ref.push_back(s4(2, 2, 1, 0));
  CHECK_THROWS_AS(padReference(ref, 5, 2), MpcError);
  CHECK(padReference(ref, 2, 2).size() == 3);
}

TEST_CASE("reference satisfies the MPC constraints and the solver improves on it")
{
  const ReachOracle big = oracleFor(1.0);
  const std::vector<Vec> path{s4(1, 1, 0, 0), s4(1.4, 1.1, 0.4, 0.1), s4(1.8, 1.2, 0, 0)};
  REQUIRE(checkEdge(big, path[0], path[1]));
  REQUIRE(checkEdge(big, path[1], path[2]));
  const ReachOracle step = oracleFor(0.1);
  MpcConfig cfg;
  cfg.weights = MpcWeights::defaults(2, 2);
  const auto full = buildReference(path, big.spec, cfg.h);
  const std::vector<Vec> ref(full.begin(), full.begin() + cfg.horizon + 1);
  const std::vector<Polytope> obs{obstacle()};
  const Box init = inflate(Box::point(ref[0]), step.tube.state_error);
  const MpcProblem p = buildMpcProblem(ref, ref, init, step, obs, cfg);
  CHECK(p.corridor.numPlanes() > 0);

  const auto u = inputsFor(p, ref);
  const ConstraintReport r = checkMpcConstraints(p, ref, u);
  CHECK(r.worst() <= 1e-9);

  const MpcSolution sol = solveMpc(p, cfg.qp, cfg.verify_tol);
  REQUIRE(sol.verified);
  CHECK(sol.status == qp::Status::Solved);
  CHECK(checkMpcConstraints(p, sol.states, sol.inputs).worst() <= cfg.verify_tol);
  CHECK(sol.objective <= mpcObjective(p, ref, u) + 1e-9);
  CHECK(sol.curve.size() == static_cast<std::size_t>(cfg.horizon));
  for (const auto& c : sol.curve)
  {
    CHECK_FALSE(oracle::denseCollision(c.positionPoints(), 0.1, obs[0].A(), obs[0].b()));
  }

  cfg.sqp_iters = 3;
  const MpcSolution ref_sol = sqpRefine(p, obs, cfg);
  REQUIRE(ref_sol.verified);
  for (std::size_t k = 1; k < ref_sol.objective_history.size(); ++k)
  {
    CHECK(ref_sol.objective_history[k] <= ref_sol.objective_history[k - 1] + 1e-12);
  }
}

TEST_CASE("path-length weight shortens the plan")
{
  const ReachOracle big = oracleFor(1.0);
  const ReachOracle step = oracleFor(0.1);
  // Detour: up then back down.
  const std::vector<Vec> path{s4(1, 1, 0, 0), s4(1.5, 1.5, 0.4, 0), s4(2, 1, 0, 0)};
  REQUIRE(checkEdge(big, path[0], path[1]));
  REQUIRE(checkEdge(big, path[1], path[2]));
  MpcConfig cfg;
  cfg.horizon = 20;
  cfg.weights = MpcWeights::defaults(2, 2);
  cfg.weights.Q = 1e-3 * Mat::Identity(4, 4);
  const auto ref = buildReference(path, big.spec, cfg.h);
  REQUIRE(ref.size() == 21);
  const Box init = Box::point(ref[0]);
  const MpcProblem p = buildMpcProblem(ref, ref, init, step, {}, cfg);
  const MpcSolution sol = solveMpc(p, cfg.qp, cfg.verify_tol);
  REQUIRE(sol.verified);
  CHECK(piecewiseLengthBound(step.spec, sol.states) <= piecewiseLengthBound(step.spec, ref));
}

TEST_CASE("corridor rejects a warm start through an obstacle")
{
  const BezierSpec spec = BezierSpec::boundaryValue(2, 2, 0.1);
  const std::vector<Vec> warm{s4(1.45, 1.3, 0, 1), s4(1.45, 1.5, 0, 1)};
  const std::vector<Polytope> obs{obstacle()};
  CHECK_THROWS_AS(buildCorridor(warm, spec, obs, 0.5), CorridorError);
  CHECK_THROWS_AS(buildCorridor(std::span(warm).first(1), spec, obs, 0.5), MpcError);
}

TEST_CASE("corridor separates a piece that nearly touches a rotated obstacle")
{
  const BezierSpec step = BezierSpec::boundaryValue(2, 2, 0.1);
  for (double gap : {1e-3, 1e-6, 1e-8})
  {
    // Diamond whose top vertex sits `gap` below the segment y = 1.
    Mat A(4, 2);
    A << 1, 1, -1, 1, 1, -1, -1, -1;
    Vec b(4);
    const double r = 0.5 - gap;
    b << 1.6 + r, -0.6 + r, 0.6 + r, -1.6 + r;
    const Polytope diamond(A, b);
    const std::vector<Vec> warm{s4(1.0, 1.0, 0, 0), s4(1.2, 1.0, 0, 0)};
    const std::vector<Polytope> obs{diamond};
    const Corridor c = buildCorridor(warm, step, obs, 0.5);
    REQUIRE(c.planes[0].size() == 1);
    const Hyperplane& h = c.planes[0][0];
    for (double s = 0.0; s <= 1.0; s += 0.125)
    {
      CHECK(h.signedDistance(s4(1.0 + 0.2 * s, 1.0, 0, 0).head(2)) >= 0.0);
    }
    for (const Vec& v : enumerateVertices(diamond))
    {
      CHECK(h.signedDistance(v) <= 1e-12);
    }
  }
}

TEST_CASE("weights are validated")
{
  MpcWeights w = MpcWeights::defaults(2, 2);
  CHECK_NOTHROW(w.validate(4, 2));
  w.R = Mat::Zero(2, 2);
  CHECK_THROWS_AS(w.validate(4, 2), MpcError);
  w = MpcWeights::defaults(2, 2);
  w.Q(0, 1) = 1.0;
  CHECK_THROWS_AS(w.validate(4, 2), MpcError);
}
