#include <bezgraph/reachability.hpp>

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace bezgraph;

namespace
{
struct Setup
{
  BezierSpec spec = BezierSpec::boundaryValue(2, 2, 1.0);
  Box xd;
  Box u;
  Box tube_state;
  Box tube_input;
  ReachOracle oracle;
};

Setup doubleIntegrator(double T = 1.0)
{
  Setup s;
  s.spec = BezierSpec::boundaryValue(2, 2, T);
  Vec lo(4), hi(4);
  lo << 0, 0, -2, -2;
  hi << 10, 10, 2, 2;
  s.xd = Box(lo, hi);
  s.u = Box::symmetric(Vec::Constant(2, 4.0));
  Vec e(4);
  e << 0.1, 0.1, 0.05, 0.05;
  s.tube_state = Box::symmetric(e);
  s.tube_input = Box::symmetric(Vec::Constant(2, 0.5));
  s.oracle = buildOracle(s.spec, Polytope::fromBox(s.xd), s.u, {s.tube_state, s.tube_input});
  return s;
}

// Margin of the pair with respect to the eroded sets, computed from the
// Hermite form alone. Positive means every control point is strictly inside.
double independentMargin(const Setup& s, const Vec& x0, const Vec& x1)
{
  const double T = s.spec.duration;
  const Mat P = oracle::hermitePoints(x0, x1, T);
  const Mat V = oracle::elevate(oracle::derivativePoints(P, T, 1));
  const Mat A = oracle::elevate(oracle::elevate(oracle::derivativePoints(P, T, 2)));
  double margin = INFINITY;
  const Vec lo = s.xd.lo + s.tube_state.hi;
  const Vec hi = s.xd.hi + s.tube_state.lo;
  for (int j = 0; j < 4; ++j)
  {
    Vec x(4);
    x << P.col(j), V.col(j);
    margin = std::min(margin, (x - lo).minCoeff());
    margin = std::min(margin, (hi - x).minCoeff());
    const Vec a = A.col(j);
    margin = std::min(margin, (a - (s.u.lo + s.tube_input.hi)).minCoeff());
    margin = std::min(margin, ((s.u.hi + s.tube_input.lo) - a).minCoeff());
  }
  return margin;
}

Vec randomState(std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> pos(0.0, 10.0);
  std::uniform_real_distribution<double> vel(-2.0, 2.0);
  Vec x(4);
  x << pos(rng), pos(rng), vel(rng), vel(rng);
  return x;
}
}  // namespace

TEST_CASE("oracle agrees with an independent control-point check")
{
  const Setup s = doubleIntegrator();
  std::mt19937_64 rng(31);
  int feasible = 0;
  int compared = 0;
  for (int k = 0; k < 20000; ++k)
  {
    Vec x0 = randomState(rng);
    Vec x1 = x0;
    x1.head(2) += oracle::randomPoints(rng, 2, 1, -1.5, 1.5);
    x1.tail(2) = oracle::randomPoints(rng, 2, 1, -2, 2);
    const double margin = independentMargin(s, x0, x1);
    if (std::abs(margin) < 1e-9)
    {
      continue;
    }
    ++compared;
    CHECK(checkEdge(s.oracle, x0, x1) == (margin > 0.0));
    if (margin > 0.0)
    {
      ++feasible;
      const StateSpaceCurve c = connectCurve(s.oracle, x0, x1);
      CHECK(curveSatisfiesOracleSets(s.oracle, c, 0.0));
      CHECK((c.positionPoints() - oracle::hermitePoints(x0, x1, 1.0)).norm() < 1e-12);
    }
  }
  CHECK(compared > 19000);
  CHECK(feasible > 500);
}

TEST_CASE("edge violation is the worst oracle row")
{
  const Setup s = doubleIntegrator();
  Vec a(4), b(4);
  a << 1, 1, 0, 0;
  b << 1.5, 1, 0, 0;
  CHECK(edgeViolation(s.oracle, a, b) < 0.0);
  CHECK(checkEdge(s.oracle, a, b));
  // Rest-to-rest over 5 m in one second needs 30 m/s^2.
  b << 6, 1, 0, 0;
  CHECK(edgeViolation(s.oracle, a, b) > 0.0);
  CHECK_FALSE(checkEdge(s.oracle, a, b));
  CHECK_THROWS_AS(connectCurve(s.oracle, a, b), ReachabilityError);
  CHECK_THROWS_AS(edgeViolation(s.oracle, Vec::Zero(3), b), GeometryError);
}

TEST_CASE("oracle rows scale with the curve degree")
{
  const Setup s = doubleIntegrator();
  CHECK(s.oracle.F.cols() == 8);
  CHECK(s.oracle.F.rows() == s.oracle.G.size());
  // 4 control points x (8 state faces + 4 input faces).
  CHECK(s.oracle.F.rows() == 48);
}

TEST_CASE("empty eroded sets are rejected")
{
  const Setup s = doubleIntegrator();
  Vec big(4);
  big << 6, 6, 0.1, 0.1;
  CHECK_THROWS_AS(buildOracle(s.spec, Polytope::fromBox(s.xd), s.u,
                              {Box::symmetric(big), s.tube_input}),
                  ReachabilityError);
  CHECK_THROWS_AS(buildOracle(s.spec, Polytope::fromBox(s.xd), s.u,
                              {s.tube_state, Box::symmetric(Vec::Constant(2, 5.0))}),
                  ReachabilityError);
  Vec off(4);
  off << 1, 1, 1, 1;
  CHECK_THROWS_AS(buildOracle(s.spec, Polytope::fromBox(s.xd), s.u,
                              {Box(off, 2 * off), s.tube_input}),
                  ReachabilityError);
}

TEST_CASE("shorter durations admit fewer long hops")
{
  const Setup slow = doubleIntegrator(1.0);
  const Setup fast = doubleIntegrator(0.5);
  Vec a(4), b(4);
  a << 5, 5, 0, 0;
  b << 5.5, 5, 0, 0;
  CHECK(checkEdge(slow.oracle, a, b));
  CHECK_FALSE(checkEdge(fast.oracle, a, b));
}
