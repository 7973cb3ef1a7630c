#pragma once

#include <bezgraph/qp.hpp>
#include <bezgraph/reachability.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace bezgraph
{
struct Edge
{
  int from = 0;
  int to = 0;
  double cost = 0.0;
};

struct GraphOptions
{
  /// Fraction of sampled vertices whose derivative components are zeroed.
  /// Zero keeps the sampling i.i.d. uniform over the sample box.
  double stationary_fraction = 0.0;
  /// Vertices appended after the random samples (e.g. start and goal).
  std::vector<Vec> extra_vertices;
  /// When > 0, only the k nearest vertices by position are tested.
  int knn_prefilter = 0;
};

/// Fixed graph of oracle-feasible boundary-value curves. Edges are sorted by
/// (from, to); lifted control points are cached per edge.
class BezierGraph
{
public:
  BezierSpec spec;
  Mat vertices;  // n x N
  std::vector<Edge> edges;
  Mat lifted;  // n x (p+1)*E, edge e occupies columns e*(p+1) ...
  std::vector<int> out_offsets;  // CSR: edges of vertex v are [out_offsets[v], out_offsets[v+1])
  std::uint64_t seed = 0;

  int numVertices() const { return static_cast<int>(vertices.cols()); }
  int numEdges() const { return static_cast<int>(edges.size()); }
  Vec vertex(int i) const { return vertices.col(i); }
  auto liftedPoints(int e) const
  {
    return lifted.middleCols(e * spec.numPoints(), spec.numPoints());
  }
  auto positionPoints(int e) const { return liftedPoints(e).topRows(spec.m); }
  StateSpaceCurve edgeCurve(int e) const { return StateSpaceCurve{spec, liftedPoints(e)}; }
};

/// Samples N vertices uniformly over sample_bounds intersected with X_d and
/// connects every ordered pair accepted by the oracle.
BezierGraph buildGraph(int N, const ReachOracle& oracle, const Box& sample_bounds,
                       std::uint64_t seed, const GraphOptions& options = {});

/// Same edge construction over caller-supplied vertices (e.g. a lattice).
BezierGraph buildGraphFromVertices(const Mat& vertices, const ReachOracle& oracle,
                                   std::uint64_t seed = 0, int knn_prefilter = 0);

enum class CutVerdict
{
  Unsafe,
  Safe,
  Indeterminate,
};

enum class Provenance : std::uint8_t
{
  HeuristicSafe,
  HeuristicUnsafe,
  QpSafe,
  QpUnsafe,
};

const char* name(CutVerdict v);
const char* name(Provenance p);
std::ostream& operator<<(std::ostream& os, CutVerdict v);
std::ostream& operator<<(std::ostream& os, Provenance p);

qp::Settings defaultCutQpSettings();

struct CutSettings
{
  double eps_cut = 1e-7;
  qp::Settings qp = defaultCutQpSettings();
  /// Disable to send every (edge, obstacle) pair to the QP.
  bool use_heuristic = true;
  /// Pairs whose bounding boxes are separated by more than the margin are
  /// safe without further tests.
  bool use_broadphase = true;
  double broadphase_margin = 1e-6;
};

/// Three-branch screen on output-space control points (m x (p+1)).
CutVerdict cutHeuristic(const Mat& points, const Polytope& obstacle,
                        double eps_cut = 1e-7);

struct CutQpResult
{
  CutVerdict verdict = CutVerdict::Unsafe;
  double slack_norm = 0.0;
  /// Separation certified by the dual bound; <= the optimal slack norm.
  double certified_separation = 0.0;
  qp::Status status = qp::Status::MaxIter;
  int iterations = 0;
};

/// Slack QP: min |delta|^2 s.t. A P lambda <= b + delta, lambda in the
/// simplex. Safe only when a dual certificate proves |delta*| > eps_cut, so
/// an unconverged solve is treated as unsafe.
CutQpResult cutQp(const Mat& points, const Polytope& obstacle,
                  const CutSettings& settings = {});

struct CutStats
{
  std::size_t pairs = 0;
  std::size_t heuristic_safe = 0;
  std::size_t heuristic_unsafe = 0;
  std::size_t qp_solves = 0;
  std::size_t qp_safe = 0;
  std::size_t qp_unsafe = 0;
  std::size_t qp_unconverged = 0;
  /// Indeterminate pairs skipped because the edge was already cut.
  std::size_t skipped = 0;
  /// Share of heuristic_safe settled by bounding boxes alone.
  std::size_t broadphase_safe = 0;

  std::size_t heuristicResolved() const { return heuristic_safe + heuristic_unsafe; }
  /// Share of (edge, obstacle) pairs decided without a QP solve.
  double heuristicFraction() const;
};

struct CutMask
{
  std::vector<std::uint8_t> alive;
  std::vector<Provenance> provenance;
  CutStats stats;

  std::size_t aliveCount() const;
};

CutMask cutGraph(const BezierGraph& graph, std::span<const Polytope> obstacles,
                 const CutSettings& settings = {});

struct GraphPath
{
  std::vector<int> vertices;
  /// Edge indices between consecutive vertices.
  std::vector<int> edges;
  double cost = 0.0;
};

struct SnapOptions
{
  /// Compare positions only instead of the full lifted state.
  bool position_only = false;
};

/// Nearest vertex v with x - v inside the tube box, or -1.
int snapStart(const BezierGraph& graph, const Vec& x, const Box& tube_error,
              const SnapOptions& options = {});
int snapGoal(const BezierGraph& graph, const Vec& goal, const SnapOptions& options = {});

/// Dijkstra over alive edges from weighted sources to target.
std::optional<GraphPath> shortestPath(const BezierGraph& graph, const CutMask& mask,
                                      std::span<const std::pair<int, double>> sources,
                                      int target);

/// Snaps start and goal, then runs Dijkstra. std::nullopt means no path.
std::optional<GraphPath> findPath(const BezierGraph& graph, const CutMask& mask,
                                  const Vec& start, const Vec& goal,
                                  const Box& tube_error, const SnapOptions& options = {});
}  // namespace bezgraph
