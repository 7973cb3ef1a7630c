#pragma once

#include <bezgraph/graph.hpp>
#include <bezgraph/mpc.hpp>

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace bezgraph
{
class ScenarioError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Feedback matrix K = [k_0 I, k_1 I, ..., k_{gamma-1} I] (m x n).
Mat integratorGains(int m, std::span<const double> gains);

/// u = u_ff + K (x_d - x).
Vec trackingController(const Vec& x, const Vec& x_desired, const Vec& u_ff, const Mat& K);

/// Exact update of the integrator chain under constant input u + w over dt.
Vec step(int m, int gamma, const Vec& x, const Vec& u, const Vec& w, double dt);

/// Tube for the sampled loop e+ = (A_d - B_d K) e + B_d w + r with
/// |w_i| <= w_max and |r| <= residual: the componentwise bound
/// sum_j |Phi^j B_d| w_max + |Phi^j| residual, scaled by safety. Throws when
/// the closed loop is not contracting.
TrackingTube computeTube(int m, int gamma, const Mat& K, double w_max, double dt,
                         double safety = 1.1, const Vec& residual = Vec());

/// Per-step state residual of holding the average nominal input over dt
/// when the nominal input is linear in time with slope at most
/// (U.hi - U.lo) / h. Double integrator only.
Vec feedforwardResidual(const Box& U, double h, double dt);

/// Obstacle translated along a piecewise-linear waypoint schedule. Before
/// the first and after the last waypoint it holds still.
struct MovingObstacle
{
  Polytope shape;
  std::vector<double> times;
  std::vector<Vec> offsets;

  bool moving() const { return times.size() > 1; }
  Polytope at(double t) const;
  /// Outer bound of the region covered over [t0, t1]: the shape grown by
  /// the bounding box of its offsets over the interval.
  Polytope sweep(double t0, double t1) const;
};

struct Rates
{
  double cut_hz = 2.0;
  double mpc_hz = 10.0;
  double sim_hz = 100.0;
};

struct GraphParams
{
  int N = 300;
  double T = 0.5;
  std::uint64_t seed = 1;
  double stationary_fraction = 0.2;
  int knn_prefilter = 0;
  /// Vertex sampling box; defaults to the bounding box of X_d.
  std::optional<Box> sample_bounds;
  /// Explicit vertex set (n x N) used instead of sampling when non-empty.
  Mat vertices;
};

struct SimParams
{
  double timeout = 30.0;
  double w_max = 0.05;
  std::vector<double> gains{25.0, 10.0};
  std::uint64_t disturbance_seed = 7;
  /// When set, every sim step is checked against the tube.
  bool check_tube = true;
  /// End the run once the vehicle is inside the goal tube.
  bool stop_at_goal = true;
};

struct Scenario
{
  int version = 1;
  std::string name = "scenario";
  BezierSpec spec;  // graph segment spec; duration = graph.T
  Polytope Xd;
  Box U;
  /// Computed from the gains and disturbance bound when absent.
  std::optional<TrackingTube> tube;
  std::vector<MovingObstacle> obstacles;
  Box scene_bounds;
  Vec start;
  Vec goal;
  GraphParams graph;
  MpcConfig mpc;
  Rates rates;
  SimParams sim;

  void validate() const;
  TrackingTube resolvedTube() const;
  std::vector<Polytope> obstaclesAt(double t) const;
};

struct TraceSample
{
  double t = 0.0;
  Vec x;
  Vec x_nominal;
  Vec u;
  Vec w;
  bool collision = false;
  bool state_violation = false;
  bool input_violation = false;
  bool tube_violation = false;
};

struct CycleEvent
{
  double t = 0.0;
  std::string kind;
  std::string detail;
};

struct TraceSummary
{
  bool success = false;
  std::optional<double> goal_time;
  std::size_t steps = 0;
  std::size_t collisions = 0;
  std::size_t state_violations = 0;
  std::size_t input_violations = 0;
  std::size_t tube_violations = 0;
  std::size_t replans = 0;
  std::size_t no_path_cycles = 0;
  std::size_t mpc_solves = 0;
  std::size_t mpc_fallbacks = 0;
  double path_length = 0.0;
  double heuristic_fraction = 1.0;
  std::size_t vertices = 0;
  std::size_t edges = 0;
};

struct ClosedLoopTrace
{
  std::vector<TraceSample> samples;
  std::vector<CycleEvent> events;
  TraceSummary summary;
};

/// Commands accepted at cycle boundaries.
struct Command
{
  enum class Kind
  {
    MoveObstacle,
    AddObstacle,
    RemoveObstacle,
    SetGoal,
    Pause,
    Resume,
  };
  Kind kind = Kind::Pause;
  int obstacle = -1;
  Vec offset;             // MoveObstacle: translation applied to the shape
  Polytope shape;         // AddObstacle
  Vec goal;               // SetGoal
};

/// One receding-horizon loop. Owns the fixed graph; everything else is
/// recomputed from it.
class ClosedLoopSession
{
public:
  explicit ClosedLoopSession(Scenario scenario);
  /// Reuses a graph built for an identical graph configuration.
  ClosedLoopSession(Scenario scenario, std::shared_ptr<const BezierGraph> graph);

  /// Runs one MPC period (cut first when due). Returns false when finished.
  bool advance();
  bool finished() const { return finished_; }
  bool paused() const { return paused_; }

  /// Validates a command and queues it. Pause and Resume act at once; the
  /// rest are applied at the next cut-cycle boundary.
  void apply(const Command& command);
  /// Runs the first cut and plan without advancing time.
  void prepare();

  double time() const { return t_; }
  std::uint64_t cycle() const { return cycle_; }
  std::uint64_t epoch() const { return epoch_; }
  /// Epoch of the obstacle set behind the current mask and plan.
  std::uint64_t snapshotEpoch() const { return snapshot_epoch_; }
  const std::vector<Vec>& plannedReference() const { return ref_; }
  const std::deque<Vec>& referenceTail() const { return tail_; }
  const CutStats& lastCutStats() const { return mask_.stats; }
  const Scenario& scenario() const { return scenario_; }
  const BezierGraph& graph() const { return *graph_; }
  const CutMask& mask() const { return mask_; }
  const std::vector<Polytope>& currentObstacles() const { return obstacles_; }
  const std::vector<int>& pathVertices() const { return path_vertices_; }
  const std::vector<Vec>& plannedStates() const { return warm_; }
  const std::vector<StateSpaceCurve>& activePieces() const { return active_; }
  const Vec& state() const { return x_; }
  const Vec& nominal() const { return x_nom_; }
  const Vec& goal() const { return goal_; }
  const TrackingTube& tube() const { return tube_; }
  const std::string& mpcStatus() const { return mpc_status_; }
  const ClosedLoopTrace& trace() const { return trace_; }
  ClosedLoopTrace takeTrace();
  bool goalReached() const { return goal_reached_; }

private:
  void cutCycle();
  void recut();
  void replanIfNeeded();
  void applyPending();
  void validateCommand(const Command& command) const;
  bool replan();
  bool planValid() const;
  void mpcCycle();
  void event(const std::string& kind, const std::string& detail = {});

  Scenario scenario_;
  std::shared_ptr<const BezierGraph> graph_;
  TrackingTube tube_;
  Box tube_pos_;
  ReachOracle graph_oracle_;
  ReachOracle step_oracle_;
  Mat K_;
  std::mt19937_64 rng_;
  int steps_per_h_ = 1;
  int h_per_mpc_ = 1;
  int mpc_per_cut_ = 1;
  std::vector<MovingObstacle> obstacle_specs_;
  std::vector<Polytope> obstacles_;
  std::vector<Polytope> inflated_;
  std::vector<Box> inflated_bounds_;
  std::size_t total_pairs_ = 0;
  std::size_t total_resolved_ = 0;
  double dt_ = 0.01;
  Mat step_pos_map_;
  Mat graph_lift_map_;
  CutSettings cut_settings_;
  std::vector<Command> pending_;
  std::uint64_t snapshot_epoch_ = 0;
  bool prepared_ = false;
  bool cut_done_ = false;
  CutMask mask_;
  Vec x_;
  Vec x_nom_;
  Vec goal_;
  int goal_vertex_ = -1;
  std::vector<int> path_vertices_;
  std::vector<Vec> warm_;  // horizon + 1 states starting at x_nom
  std::vector<Vec> ref_;   // graph reference aligned with warm_
  std::deque<Vec> tail_;  // graph reference beyond the horizon
  std::vector<StateSpaceCurve> active_;
  std::string mpc_status_ = "idle";
  double t_ = 0.0;
  std::uint64_t cycle_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t planned_epoch_ = ~0ULL;
  bool finished_ = false;
  bool paused_ = false;
  bool goal_reached_ = false;
  ClosedLoopTrace trace_;
};

std::shared_ptr<const BezierGraph> buildScenarioGraph(const Scenario& scenario);

ClosedLoopTrace runClosedLoop(const Scenario& scenario);
ClosedLoopTrace runClosedLoop(const Scenario& scenario, std::shared_ptr<const BezierGraph> graph);

/// One-shot plan: cut, path and reference without simulation.
struct PlanResult
{
  std::optional<GraphPath> path;
  CutMask mask;
  std::vector<Vec> reference;
  std::optional<MpcSolution> refined;
  TrackingTube tube;
};
PlanResult planOnce(const Scenario& scenario, const BezierGraph& graph);
}  // namespace bezgraph
