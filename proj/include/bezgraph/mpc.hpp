#pragma once

#include <bezgraph/qp.hpp>
#include <bezgraph/reachability.hpp>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bezgraph
{
class MpcError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a warm-start piece already touches an inflated obstacle.
class CorridorError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Q tracks the reference, Fw weights successive differences (path length),
/// R weights input control points and V the terminal state. Q, Fw, V are
/// n x n and R is m x m.
struct MpcWeights
{
  Mat Q;
  Mat Fw;
  Mat R;
  Mat V;

  static MpcWeights defaults(int m, int gamma);
  void validate(int n, int m) const;
};

struct MpcConfig
{
  int horizon = 10;
  double h = 0.1;
  MpcWeights weights;
  int sqp_iters = 1;
  /// Half-width added around each warm piece's control points.
  double trust_radius = 0.5;
  /// Feasibility tolerance for the post-solve constraint check.
  double verify_tol = 1e-8;
  qp::Settings qp;
};

struct Discretization
{
  Mat A;
  Mat B;
};

/// Zero-order-hold discretization of the integrator chain. B is n x m.
Discretization discretize(const BezierSpec& spec, double h);

/// Exact discretization when the input over a step is the degree gamma-1
/// Bezier polynomial with control points u = [c_0; ...; c_{gamma-1}]. B is
/// n x (m gamma). This is the input class produced by boundary-value curves.
Discretization discretizeBernstein(const BezierSpec& spec, double h);

/// Lifted states of the path's boundary-value curves sampled every h.
/// Requires spec.duration / h to be an integer. A single vertex gives a
/// one-element reference.
std::vector<Vec> buildReference(std::span<const Vec> path_states, const BezierSpec& spec,
                                double h);

/// Extends a reference to `length` states by holding its last state, which
/// must be stationary.
std::vector<Vec> padReference(std::vector<Vec> reference, std::size_t length, int m);

bool isStationary(const Vec& x, int m, double eps = 0.0);

/// Per-step safe half-spaces normal . y >= offset for every output control
/// point of the step, plus a trust box on the same points.
struct Corridor
{
  std::vector<std::vector<Hyperplane>> planes;
  std::vector<Box> trust;

  std::size_t numPlanes() const;
};

/// Corridor around the pieces between consecutive states of `warm`. Every
/// inflated obstacle whose bounds meet the step's trust box contributes one
/// separating face: the face adjacent to the step's start position when it
/// separates the whole piece, otherwise the supporting plane normal to the
/// hull-to-obstacle gap. Throws CorridorError when a piece's hull touches an
/// obstacle.
Corridor buildCorridor(std::span<const Vec> warm, const BezierSpec& step_spec,
                       std::span<const Polytope> inflated_obstacles, double trust_radius);

struct MpcProblem
{
  int horizon = 0;
  double h = 0.0;
  BezierSpec step_spec;
  Discretization dynamics;
  std::vector<Vec> reference;  // horizon + 1
  std::vector<Vec> warm;       // horizon + 1
  Box initial_set;
  Corridor corridor;
  ReachOracle oracle;  // built at duration h
  MpcWeights weights;
};

MpcProblem buildMpcProblem(std::span<const Vec> reference, std::span<const Vec> warm,
                           const Box& initial_set, const ReachOracle& step_oracle,
                           std::span<const Polytope> inflated_obstacles,
                           const MpcConfig& config);

/// Input control points that carry states[k] to states[k+1].
std::vector<Vec> inputsFor(const MpcProblem& problem, std::span<const Vec> states);

double mpcObjective(const MpcProblem& problem, std::span<const Vec> states,
                    std::span<const Vec> inputs);

struct ConstraintReport
{
  double dynamics = 0.0;
  double initial = 0.0;
  double oracle = 0.0;
  double corridor = 0.0;
  double trust = 0.0;
  double terminal = 0.0;

  double worst() const;
};

/// Largest violation of each constraint family (0 when satisfied).
ConstraintReport checkMpcConstraints(const MpcProblem& problem, std::span<const Vec> states,
                                     std::span<const Vec> inputs);

struct MpcSolution
{
  std::vector<Vec> states;
  std::vector<Vec> inputs;
  qp::Status status = qp::Status::MaxIter;
  bool verified = false;
  double objective = 0.0;
  int iterations = 0;
  std::vector<double> objective_history;
  std::vector<StateSpaceCurve> curve;
  std::string message;
};

/// Solves the tracking QP warm-started from problem.warm and checks the
/// result against every constraint. verified is false when the solver fails
/// or the check exceeds verify_tol.
MpcSolution solveMpc(const MpcProblem& problem, const qp::Settings& settings = {},
                     double verify_tol = 1e-8);

/// Re-linearizes the corridor at the previous solution and re-solves,
/// keeping an iterate only when it verifies and does not raise the
/// objective. One iteration equals solveMpc.
MpcSolution sqpRefine(const MpcProblem& problem, std::span<const Polytope> inflated_obstacles,
                      const MpcConfig& config);

/// Boundary-value pieces between consecutive states.
std::vector<StateSpaceCurve> piecesFor(const BezierSpec& step_spec, std::span<const Vec> states);

/// Sum of output control-polygon lengths over the pieces.
double piecewiseLengthBound(const BezierSpec& step_spec, std::span<const Vec> states);
}  // namespace bezgraph
