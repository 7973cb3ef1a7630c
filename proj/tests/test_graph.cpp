#include <bezgraph/graph.hpp>

#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <tuple>

using namespace bezgraph;

namespace
{
ReachOracle makeOracle()
{
  const BezierSpec spec = BezierSpec::boundaryValue(2, 2, 1.0);
  Vec lo(4), hi(4);
  lo << 0, 0, -2, -2;
  hi << 10, 10, 2, 2;
  Vec e(4);
  e << 0.1, 0.1, 0.05, 0.05;
  return buildOracle(spec, Polytope::fromBox(Box(lo, hi)), Box::symmetric(Vec::Constant(2, 4.0)),
                     {Box::symmetric(e), Box::symmetric(Vec::Constant(2, 0.5))});
}

Box sampleBounds()
{
  Vec lo(4), hi(4);
  lo << 0, 0, -2, -2;
  hi << 10, 10, 2, 2;
  return Box(lo, hi);
}

Polytope boxObstacle(double x0, double y0, double x1, double y1)
{
  Vec lo(2), hi(2);
  lo << x0, y0;
  hi << x1, y1;
  return Polytope::fromBox(Box(lo, hi));
}

Mat pts2(std::initializer_list<double> xs, std::initializer_list<double> ys)
{
  Mat P(2, static_cast<int>(xs.size()));
  int j = 0;
  for (double x : xs)
  {
    P(0, j++) = x;
  }
  j = 0;
  for (double y : ys)
  {
    P(1, j++) = y;
  }
  return P;
}
}  // namespace

TEST_CASE("graph edges are exactly the oracle-feasible ordered pairs")
{
  const ReachOracle o = makeOracle();
  GraphOptions opts;
  opts.stationary_fraction = 0.3;
  const BezierGraph g = buildGraph(150, o, sampleBounds(), 5, opts);
  REQUIRE(g.numVertices() == 150);
  std::vector<std::pair<int, int>> expected;
  for (int i = 0; i < 150; ++i)
  {
    for (int j = 0; j < 150; ++j)
    {
      if (i != j && checkEdge(o, g.vertex(i), g.vertex(j)))
      {
        expected.emplace_back(i, j);
      }
    }
  }
  REQUIRE(static_cast<std::size_t>(g.numEdges()) == expected.size());
  CHECK(g.numEdges() > 0);
  for (int e = 0; e < g.numEdges(); ++e)
  {
    CHECK(g.edges[e].from == expected[e].first);
    CHECK(g.edges[e].to == expected[e].second);
    const StateSpaceCurve c = connectCurve(o, g.vertex(g.edges[e].from), g.vertex(g.edges[e].to));
    CHECK((g.liftedPoints(e) - c.lifted).norm() < 1e-12);
    CHECK(g.edges[e].cost == doctest::Approx(pathLengthBound(c.positionPoints())));
  }
  for (int v = 0; v < 150; ++v)
  {
    for (int e = g.out_offsets[v]; e < g.out_offsets[v + 1]; ++e)
    {
      CHECK(g.edges[e].from == v);
    }
  }
}

TEST_CASE("graph construction is independent of the worker count")
{
  const ReachOracle o = makeOracle();
  const int saved = workerCount();
  setWorkerCount(1);
  const BezierGraph a = buildGraph(200, o, sampleBounds(), 9);
  setWorkerCount(4);
  const BezierGraph b = buildGraph(200, o, sampleBounds(), 9);
  setWorkerCount(saved);
  CHECK(a.vertices == b.vertices);
  CHECK(a.lifted == b.lifted);
  REQUIRE(a.numEdges() == b.numEdges());
  for (int e = 0; e < a.numEdges(); ++e)
  {
    CHECK(a.edges[e].to == b.edges[e].to);
    CHECK(a.edges[e].cost == b.edges[e].cost);
  }
  CHECK_THROWS(buildGraph(1, o, sampleBounds(), 1));
}

TEST_CASE("heuristic branches")
{
  const Polytope O = boxObstacle(0, 0, 1, 1);
  // A control point inside.
  CHECK(cutHeuristic(pts2({-1, 0.5, 3}, {0, 0.5, 0}), O) == CutVerdict::Unsafe);
  // All points beyond the right face.
  CHECK(cutHeuristic(pts2({2, 3, 2.5}, {0, 1, 2}), O) == CutVerdict::Safe);
  // Hull wraps the corner without a point inside: the adjacent face does not
  // separate.
  CHECK(cutHeuristic(pts2({-0.5, 1.5}, {0.5, 1.8}), O) == CutVerdict::Indeterminate);
}

TEST_CASE("slack QP matches a separating-axis oracle")
{
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-3.0, 4.0);
  const Polytope O = boxObstacle(0, 0, 1, 1);
  const Mat corners = oracle::boxCorners(0, 0, 1, 1);
  int safe = 0;
  int unsafe = 0;
  for (int k = 0; k < 300; ++k)
  {
    const Mat P = oracle::randomPoints(rng, 2, 4, -1, 1).colwise() +
                  oracle::randomPoints(rng, 2, 1, -2.5, 3.5).col(0);
    const double gap = oracle::polygonGap(P, corners);
    if (std::abs(gap) < 1e-5)
    {
      continue;
    }
    const CutQpResult r = cutQp(P, O);
    CAPTURE(k);
    CHECK(r.verdict == (gap > 0.0 ? CutVerdict::Safe : CutVerdict::Unsafe));
    if (r.verdict == CutVerdict::Safe)
    {
      ++safe;
      CHECK(r.certified_separation > 0.0);
      CHECK(r.certified_separation <= r.slack_norm + 1e-9);
    }
    else
    {
      ++unsafe;
    }
    const CutVerdict h = cutHeuristic(P, O);
    if (h != CutVerdict::Indeterminate)
    {
      CHECK(h == r.verdict);
    }
  }
  CHECK(safe > 30);
  CHECK(unsafe > 30);
}

TEST_CASE("rotated obstacle goes through the general path")
{
  Mat A(4, 2);
  A << 1, 1, -1, -1, 1, -1, -1, 1;
  Vec b(4);
  b << 1, 1, 1, 1;
  const Polytope diamond(A, b);
  REQUIRE_FALSE(diamond.box());
  const Mat far = pts2({2, 3}, {2, 2.5});
  CHECK(cutHeuristic(far, diamond) == CutVerdict::Safe);
  CHECK(cutQp(far, diamond).verdict == CutVerdict::Safe);
  const Mat through = pts2({-2, 2}, {0.2, 0.2});
  CHECK(cutQp(through, diamond).verdict == CutVerdict::Unsafe);
}

TEST_CASE("cut mask equals the QP-everywhere mask and survivors are collision free")
{
  const ReachOracle o = makeOracle();
  const BezierGraph g = buildGraph(120, o, sampleBounds(), 3);
  std::vector<Polytope> obstacles{boxObstacle(2, 2, 3, 5), boxObstacle(6, 1, 7.5, 2),
                                  boxObstacle(4, 7, 8, 7.4)};
  const CutMask fast = cutGraph(g, obstacles);
  CutSettings all;
  all.use_heuristic = false;
  all.use_broadphase = false;
  const CutMask slow = cutGraph(g, obstacles, all);
  CHECK(fast.alive == slow.alive);
  CHECK(slow.stats.qp_solves == slow.stats.pairs);
  CHECK(fast.stats.qp_solves < slow.stats.qp_solves);
  CHECK(fast.aliveCount() < static_cast<std::size_t>(g.numEdges()));
  for (int e = 0; e < g.numEdges(); ++e)
  {
    if (!fast.alive[e])
    {
      continue;
    }
    const Mat P = g.positionPoints(e);
    for (const auto& obs : obstacles)
    {
      CHECK_FALSE(oracle::denseCollision(P, 1.0, obs.A(), obs.b()));
    }
  }
  const std::size_t resolved = fast.stats.heuristic_safe + fast.stats.heuristic_unsafe +
                               fast.stats.qp_solves + fast.stats.skipped;
  CHECK(resolved == fast.stats.pairs);
}

TEST_CASE("shortest path cost matches Bellman-Ford on the alive subgraph")
{
  const ReachOracle o = makeOracle();
  GraphOptions opts;
  opts.stationary_fraction = 0.5;
  const BezierGraph g = buildGraph(400, o, sampleBounds(), 8, opts);
  std::vector<Polytope> obstacles{boxObstacle(3, 3, 7, 7)};
  const CutMask mask = cutGraph(g, obstacles);
  std::vector<std::tuple<int, int, double>> edges;
  for (int e = 0; e < g.numEdges(); ++e)
  {
    if (mask.alive[e])
    {
      edges.emplace_back(g.edges[e].from, g.edges[e].to, g.edges[e].cost);
    }
  }
  int src_vertex = 0;
  for (int v = 0; v < g.numVertices(); ++v)
  {
    if (g.out_offsets[v + 1] - g.out_offsets[v] >
        g.out_offsets[src_vertex + 1] - g.out_offsets[src_vertex])
    {
      src_vertex = v;
    }
  }
  int checked = 0;
  int unreachable = 0;
  for (int t = 0; t < g.numVertices(); ++t)
  {
    if (t == src_vertex)
    {
      continue;
    }
    const std::pair<int, double> src{src_vertex, 0.0};
    const auto p = shortestPath(g, mask, std::span(&src, 1), t);
    const double ref = oracle::bellmanFord(g.numVertices(), edges, src_vertex, t);
    if (!p)
    {
      ++unreachable;
      CHECK(std::isinf(ref));
      continue;
    }
    ++checked;
    CHECK(p->cost == doctest::Approx(ref).epsilon(1e-12));
    CHECK(p->vertices.front() == src_vertex);
    CHECK(p->vertices.back() == t);
    REQUIRE(p->edges.size() + 1 == p->vertices.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < p->edges.size(); ++k)
    {
      const Edge& e = g.edges[p->edges[k]];
      CHECK(mask.alive[p->edges[k]]);
      CHECK(e.from == p->vertices[k]);
      CHECK(e.to == p->vertices[k + 1]);
      sum += e.cost;
    }
    CHECK(sum == doctest::Approx(p->cost));
  }
  CHECK(checked > 20);
  CHECK(unreachable > 0);
}

TEST_CASE("snapping respects the tube box")
{
  const ReachOracle o = makeOracle();
  const BezierGraph g = buildGraph(50, o, sampleBounds(), 2);
  const Vec v = g.vertex(7);
  CHECK(snapStart(g, v, o.tube.state_error) == 7);
  Vec far = v;
  far(0) += 5.0;
  const int s = snapStart(g, far, o.tube.state_error);
  if (s >= 0)
  {
    CHECK(o.tube.state_error.contains(far - g.vertex(s)));
  }
  CHECK(snapGoal(g, v) == 7);
}
