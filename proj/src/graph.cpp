#include <bezgraph/graph.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>

namespace bezgraph
{
namespace
{
constexpr int kMaxSmallDim = 8;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxSmallDim, 1>;

BezierGraph connectVertices(const Mat& V, const ReachOracle& oracle,
                            std::uint64_t seed, int knn)
{
  const int N = static_cast<int>(V.cols());
  const int n = oracle.stateDim();
  checkDim(n, static_cast<int>(V.rows()), "buildGraph: vertices");
  const int nF = static_cast<int>(oracle.F.rows());
  const Mat left = oracle.F1() * V;                            // nF x N
  const Mat right = oracle.F2() * V;                           // nF x N
  const Mat rightMinusG = right.colwise() - oracle.G;          // nF x N
  const int m = oracle.spec.m;

  std::vector<std::vector<int>> targets(N);
  parallelFor(static_cast<std::size_t>(N), [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    const double* a = left.col(i).data();
    auto test = [&](int j) {
      if (j == i)
      {
        return;
      }
      const double* b = rightMinusG.col(j).data();
      for (int r = 0; r < nF; ++r)
      {
        if (a[r] + b[r] > kGeometryEps)
        {
          return;
        }
      }
      targets[i].push_back(j);
    };
    if (knn > 0 && knn < N - 1)
    {
      std::vector<std::pair<double, int>> d;
      d.reserve(N);
      for (int j = 0; j < N; ++j)
      {
        if (j != i)
        {
          d.emplace_back((V.col(j).head(m) - V.col(i).head(m)).squaredNorm(), j);
        }
      }
      std::partial_sort(d.begin(), d.begin() + knn, d.end());
      std::vector<int> cand;
      for (int k = 0; k < knn; ++k)
      {
        cand.push_back(d[k].second);
      }
      std::sort(cand.begin(), cand.end());
      for (int j : cand)
      {
        test(j);
      }
    }
    else
    {
      for (int j = 0; j < N; ++j)
      {
        test(j);
      }
    }
  });

  BezierGraph g;
  g.spec = oracle.spec;
  g.vertices = V;
  g.seed = seed;
  g.out_offsets.assign(N + 1, 0);
  std::size_t total = 0;
  for (int i = 0; i < N; ++i)
  {
    g.out_offsets[i] = static_cast<int>(total);
    total += targets[i].size();
  }
  g.out_offsets[N] = static_cast<int>(total);
  g.edges.resize(total);
  const int np = oracle.spec.numPoints();
  g.lifted.resize(n, static_cast<Eigen::Index>(total) * np);
  const Mat L = liftedBoundaryMap(oracle.spec);
  parallelFor(static_cast<std::size_t>(N), [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    int e = g.out_offsets[i];
    Vec xx(2 * n);
    xx.head(n) = V.col(i);
    for (int j : targets[i])
    {
      xx.tail(n) = V.col(j);
      const Vec flat = L * xx;
      g.lifted.middleCols(static_cast<Eigen::Index>(e) * np, np) =
          Eigen::Map<const Mat>(flat.data(), n, np);
      g.edges[e] = Edge{i, j, pathLengthBound(Mat(g.lifted.block(0, e * np, m, np)))};
      ++e;
    }
  });
  return g;
}

/// Squared distance from v to a box polytope and the clamped point.
double boxDistance2(const Box& box, const SmallVec& v, SmallVec& c)
{
  c = v.cwiseMax(box.lo).cwiseMin(box.hi);
  return (v - c).squaredNorm();
}
}  // namespace

BezierGraph buildGraph(int N, const ReachOracle& oracle, const Box& sample_bounds,
                       std::uint64_t seed, const GraphOptions& options)
{
  if (N < 2)
  {
    throw std::invalid_argument("buildGraph: N must be at least 2");
  }
  const int n = oracle.stateDim();
  checkDim(n, sample_bounds.dim(), "buildGraph: sample bounds");
  if (!sample_bounds.isBounded() || isEmpty(sample_bounds))
  {
    throw std::invalid_argument("buildGraph: sample bounds must be a bounded, nonempty box");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int m = oracle.spec.m;
  const int extra = static_cast<int>(options.extra_vertices.size());
  Mat V(n, N + extra);
  int count = 0;
  long attempts = 0;
  const long max_attempts = 1000L * N + 1000;
  while (count < N)
  {
    if (++attempts > max_attempts)
    {
      throw std::invalid_argument("buildGraph: sample bounds barely intersect X_d");
    }
    Vec x(n);
    for (int k = 0; k < n; ++k)
    {
      x(k) = sample_bounds.lo(k) + unit(rng) * (sample_bounds.hi(k) - sample_bounds.lo(k));
    }
    if (options.stationary_fraction > 0.0 && unit(rng) < options.stationary_fraction)
    {
      x.tail(n - m).setZero();
    }
    if (!contains(oracle.Xd, x))
    {
      continue;
    }
    V.col(count++) = x;
  }
  for (int k = 0; k < extra; ++k)
  {
    checkDim(n, static_cast<int>(options.extra_vertices[k].size()), "buildGraph: extra vertex");
    V.col(N + k) = options.extra_vertices[k];
  }
  return connectVertices(V, oracle, seed, options.knn_prefilter);
}

BezierGraph buildGraphFromVertices(const Mat& vertices, const ReachOracle& oracle,
                                   std::uint64_t seed, int knn_prefilter)
{
  if (vertices.cols() < 2)
  {
    throw std::invalid_argument("buildGraphFromVertices: need at least two vertices");
  }
  return connectVertices(vertices, oracle, seed, knn_prefilter);
}

const char* name(CutVerdict v)
{
  switch (v)
  {
    case CutVerdict::Unsafe:
      return "unsafe";
    case CutVerdict::Safe:
      return "safe";
    case CutVerdict::Indeterminate:
      return "indeterminate";
  }
  return "unknown";
}

const char* name(Provenance p)
{
  switch (p)
  {
    case Provenance::HeuristicSafe:
      return "heuristic_safe";
    case Provenance::HeuristicUnsafe:
      return "heuristic_unsafe";
    case Provenance::QpSafe:
      return "qp_safe";
    case Provenance::QpUnsafe:
      return "qp_unsafe";
  }
  return "unknown";
}

std::ostream& operator<<(std::ostream& os, CutVerdict v) { return os << name(v); }

std::ostream& operator<<(std::ostream& os, Provenance p) { return os << name(p); }

qp::Settings defaultCutQpSettings()
{
  qp::Settings s;
  s.max_iter = 50;
  s.eps_abs = 1e-7;
  s.eps_rel = 1e-7;
  s.rho = 1.0;
  s.check_interval = 5;
  s.scaling_iterations = 5;
  return s;
}

CutVerdict cutHeuristic(const Mat& points, const Polytope& obstacle, double eps_cut)
{
  const int d = obstacle.dim();
  checkDim(d, static_cast<int>(points.rows()), "cutHeuristic");
  const int k = static_cast<int>(points.cols());

  // (1) any control point inside the obstacle
  for (int j = 0; j < k; ++j)
  {
    if (contains(obstacle, points.col(j)))
    {
      return CutVerdict::Unsafe;
    }
  }

  // (2) face adjacent to the closest control point separates all points
  Hyperplane h;
  if (obstacle.box() && d <= kMaxSmallDim)
  {
    const Box& box = *obstacle.box();
    SmallVec c(d), best_c(d);
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j)
    {
      const double d2 = boxDistance2(box, points.col(j), c);
      if (d2 < best_d2)
      {
        best_d2 = d2;
        best = j;
        best_c = c;
      }
    }
    h = adjacentHyperplane(obstacle, points.col(best));
  }
  else
  {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j)
    {
      const Vec c = closestPoint(obstacle, points.col(j));
      const double dist = (c - points.col(j)).norm();
      if (dist < best_d)
      {
        best_d = dist;
        best = j;
      }
    }
    h = adjacentHyperplane(obstacle, points.col(best));
  }
  for (int j = 0; j < k; ++j)
  {
    if (h.signedDistance(points.col(j)) <= eps_cut)
    {
      // (3) defer to the QP
      return CutVerdict::Indeterminate;
    }
  }
  return CutVerdict::Safe;
}

CutQpResult cutQp(const Mat& points, const Polytope& obstacle, const CutSettings& settings)
{
  const Polytope O = obstacle.normalized();
  const int d = O.dim();
  checkDim(d, static_cast<int>(points.rows()), "cutQp");
  const int k = static_cast<int>(points.cols());
  const int nc = O.numConstraints();
  const Mat M = O.A() * points;  // nc x k
  const int nv = k + nc;

  std::vector<Eigen::Triplet<double>> pt;
  for (int i = 0; i < nc; ++i)
  {
    pt.emplace_back(k + i, k + i, 2.0);
  }
  qp::SparseMat P(nv, nv);
  P.setFromTriplets(pt.begin(), pt.end());

  const int rows = nc + k + 1;
  std::vector<Eigen::Triplet<double>> at;
  Vec l(rows), u(rows);
  for (int i = 0; i < nc; ++i)
  {
    for (int j = 0; j < k; ++j)
    {
      at.emplace_back(i, j, M(i, j));
    }
    at.emplace_back(i, k + i, -1.0);
    l(i) = -qp::kInfinity;
    u(i) = O.b()(i);
  }
  for (int j = 0; j < k; ++j)
  {
    at.emplace_back(nc + j, j, 1.0);
    l(nc + j) = 0.0;
    u(nc + j) = qp::kInfinity;
    at.emplace_back(nc + k, j, 1.0);
  }
  l(nc + k) = 1.0;
  u(nc + k) = 1.0;
  qp::SparseMat A(rows, nv);
  A.setFromTriplets(at.begin(), at.end());

  qp::Problem prob{P, Vec::Zero(nv), A, l, u};
  const qp::Solution sol = qp::solve(prob, settings.qp);

  CutQpResult out;
  out.status = sol.status;
  out.iterations = sol.iterations;
  out.slack_norm = sol.x.tail(nc).norm();

  // Weak duality: for w >= 0, a(w) = min_j (M' w)_j - w'b satisfies
  // a(w) / |w| <= |delta*| whenever a(w) > 0.
  auto certificate = [&](const Vec& w) {
    const double nw = w.norm();
    if (!(nw > 0.0) || !w.allFinite())
    {
      return 0.0;
    }
    const double a = (M.transpose() * w).minCoeff() - w.dot(O.b());
    return a > 0.0 ? a / nw : 0.0;
  };
  const double cert = std::max(certificate(sol.x.tail(nc).cwiseMax(0.0)),
                               certificate(sol.y.head(nc).cwiseMax(0.0)));
  out.certified_separation = cert;
  out.verdict = cert > settings.eps_cut ? CutVerdict::Safe : CutVerdict::Unsafe;
  return out;
}

double CutStats::heuristicFraction() const
{
  return pairs == 0 ? 1.0 : static_cast<double>(heuristicResolved()) / static_cast<double>(pairs);
}

std::size_t CutMask::aliveCount() const
{
  return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), std::uint8_t{1}));
}

CutMask cutGraph(const BezierGraph& graph, std::span<const Polytope> obstacles,
                 const CutSettings& settings)
{
  const int E = graph.numEdges();
  const int O = static_cast<int>(obstacles.size());
  const int m = graph.spec.m;
  CutMask mask;
  mask.alive.assign(E, 1);
  mask.provenance.assign(E, Provenance::HeuristicSafe);
  mask.stats.pairs = static_cast<std::size_t>(E) * static_cast<std::size_t>(O);
  if (O == 0 || E == 0)
  {
    return mask;
  }
  for (const auto& obs : obstacles)
  {
    checkDim(m, obs.dim(), "cutGraph: obstacle");
  }
  std::vector<Polytope> normalized;
  normalized.reserve(O);
  std::vector<Box> obstacle_bounds;
  obstacle_bounds.reserve(O);
  const Vec inf = Vec::Constant(m, std::numeric_limits<double>::infinity());
  for (const auto& obs : obstacles)
  {
    normalized.push_back(obs.normalized());
    if (settings.use_broadphase && (obs.box() || m <= 3))
    {
      try
      {
        obstacle_bounds.push_back(boundingBox(obs));
        continue;
      }
      catch (const GeometryError&)
      {
      }
    }
    obstacle_bounds.push_back(Box(-inf, inf));
  }

  // Phase 1: broad phase and heuristic on every pair.
  enum : std::uint8_t
  {
    kUnsafe,
    kSafe,
    kIndeterminate,
    kBroadSafe,
  };
  std::vector<std::uint8_t> verdict(static_cast<std::size_t>(E) * O, kIndeterminate);
  const double margin = settings.broadphase_margin;
  parallelFor(static_cast<std::size_t>(E), [&](std::size_t e) {
    const Mat pts = graph.positionPoints(static_cast<int>(e));
    const Vec lo = pts.rowwise().minCoeff();
    const Vec hi = pts.rowwise().maxCoeff();
    for (int o = 0; o < O; ++o)
    {
      std::uint8_t& v = verdict[e * O + o];
      const Box& ob = obstacle_bounds[o];
      if (settings.use_broadphase &&
          ((lo - ob.hi).maxCoeff() > margin || (ob.lo - hi).maxCoeff() > margin))
      {
        v = kBroadSafe;
        continue;
      }
      if (settings.use_heuristic)
      {
        switch (cutHeuristic(pts, normalized[o], settings.eps_cut))
        {
          case CutVerdict::Unsafe:
            v = kUnsafe;
            break;
          case CutVerdict::Safe:
            v = kSafe;
            break;
          case CutVerdict::Indeterminate:
            v = kIndeterminate;
            break;
        }
      }
    }
  });

  std::vector<std::uint8_t> heuristic_dead(E, 0);
  for (int e = 0; e < E; ++e)
  {
    for (int o = 0; o < O; ++o)
    {
      const std::uint8_t v = verdict[static_cast<std::size_t>(e) * O + o];
      if (v == kBroadSafe)
      {
        ++mask.stats.broadphase_safe;
        ++mask.stats.heuristic_safe;
      }
      else if (v == kSafe)
      {
        ++mask.stats.heuristic_safe;
      }
      else if (v == kUnsafe)
      {
        ++mask.stats.heuristic_unsafe;
        heuristic_dead[e] = 1;
      }
    }
  }
  std::vector<std::size_t> pending;
  for (int e = 0; e < E; ++e)
  {
    for (int o = 0; o < O; ++o)
    {
      const std::size_t idx = static_cast<std::size_t>(e) * O + o;
      if (verdict[idx] != kIndeterminate)
      {
        continue;
      }
      if (heuristic_dead[e])
      {
        ++mask.stats.skipped;
      }
      else
      {
        pending.push_back(idx);
      }
    }
  }

  // Phase 2: batched QP on the remaining pairs of live edges.
  std::vector<CutQpResult> results(pending.size());
  parallelFor(pending.size(), [&](std::size_t i) {
    const std::size_t idx = pending[i];
    const int e = static_cast<int>(idx / O);
    const int o = static_cast<int>(idx % O);
    results[i] = cutQp(Mat(graph.positionPoints(e)), normalized[o], settings);
  });
  mask.stats.qp_solves = pending.size();
  std::vector<std::uint8_t> used_qp(E, 0);
  std::vector<std::uint8_t> qp_dead(E, 0);
  for (std::size_t i = 0; i < pending.size(); ++i)
  {
    const std::size_t e = pending[i] / O;
    used_qp[e] = 1;
    if (results[i].verdict == CutVerdict::Safe)
    {
      ++mask.stats.qp_safe;
    }
    else
    {
      ++mask.stats.qp_unsafe;
      qp_dead[e] = 1;
      if (results[i].status != qp::Status::Solved)
      {
        ++mask.stats.qp_unconverged;
      }
    }
  }

  for (int e = 0; e < E; ++e)
  {
    if (heuristic_dead[e])
    {
      mask.alive[e] = 0;
      mask.provenance[e] = Provenance::HeuristicUnsafe;
    }
    else if (qp_dead[e])
    {
      mask.alive[e] = 0;
      mask.provenance[e] = Provenance::QpUnsafe;
    }
    else
    {
      mask.provenance[e] = used_qp[e] ? Provenance::QpSafe : Provenance::HeuristicSafe;
    }
  }
  return mask;
}

int snapStart(const BezierGraph& graph, const Vec& x, const Box& tube_error,
              const SnapOptions& options)
{
  checkDim(graph.spec.stateDim(), static_cast<int>(x.size()), "snapStart");
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  const int m = graph.spec.m;
  for (int i = 0; i < graph.numVertices(); ++i)
  {
    const Vec diff = x - graph.vertices.col(i);
    if (!tube_error.contains(diff))
    {
      continue;
    }
    const double dist = options.position_only ? diff.head(m).norm() : diff.norm();
    if (dist < best_d)
    {
      best_d = dist;
      best = i;
    }
  }
  return best;
}

int snapGoal(const BezierGraph& graph, const Vec& goal, const SnapOptions& options)
{
  checkDim(graph.spec.stateDim(), static_cast<int>(goal.size()), "snapGoal");
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  const int m = graph.spec.m;
  for (int i = 0; i < graph.numVertices(); ++i)
  {
    const Vec diff = goal - graph.vertices.col(i);
    const double dist = options.position_only ? diff.head(m).norm() : diff.norm();
    if (dist < best_d)
    {
      best_d = dist;
      best = i;
    }
  }
  return best;
}

std::optional<GraphPath> shortestPath(const BezierGraph& graph, const CutMask& mask,
                                      std::span<const std::pair<int, double>> sources,
                                      int target)
{
  const int N = graph.numVertices();
  if (target < 0 || target >= N)
  {
    return std::nullopt;
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(N, inf);
  std::vector<int> via_edge(N, -1);
  std::vector<std::uint8_t> done(N, 0);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  for (const auto& [v, c] : sources)
  {
    if (v >= 0 && v < N && c < dist[v])
    {
      dist[v] = c;
      via_edge[v] = -1;
      heap.emplace(c, v);
    }
  }
  while (!heap.empty())
  {
    const auto [d, v] = heap.top();
    heap.pop();
    if (done[v])
    {
      continue;
    }
    done[v] = 1;
    if (v == target)
    {
      break;
    }
    for (int e = graph.out_offsets[v]; e < graph.out_offsets[v + 1]; ++e)
    {
      if (!mask.alive.empty() && !mask.alive[e])
      {
        continue;
      }
      const int w = graph.edges[e].to;
      const double nd = d + graph.edges[e].cost;
      if (nd < dist[w])
      {
        dist[w] = nd;
        via_edge[w] = e;
        heap.emplace(nd, w);
      }
    }
  }
  if (!std::isfinite(dist[target]))
  {
    return std::nullopt;
  }
  GraphPath path;
  path.cost = dist[target];
  int v = target;
  path.vertices.push_back(v);
  while (via_edge[v] >= 0)
  {
    path.edges.push_back(via_edge[v]);
    v = graph.edges[via_edge[v]].from;
    path.vertices.push_back(v);
  }
  std::reverse(path.vertices.begin(), path.vertices.end());
  std::reverse(path.edges.begin(), path.edges.end());
  return path;
}

std::optional<GraphPath> findPath(const BezierGraph& graph, const CutMask& mask,
                                  const Vec& start, const Vec& goal,
                                  const Box& tube_error, const SnapOptions& options)
{
  const int s = snapStart(graph, start, tube_error, options);
  const int g = snapGoal(graph, goal, options);
  if (s < 0 || g < 0)
  {
    return std::nullopt;
  }
  const std::pair<int, double> src{s, 0.0};
  return shortestPath(graph, mask, std::span(&src, 1), g);
}
}  // namespace bezgraph
