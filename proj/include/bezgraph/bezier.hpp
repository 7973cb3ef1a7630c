#pragma once

#include <bezgraph/types.hpp>

#include <span>
#include <stdexcept>
#include <vector>

namespace bezgraph
{
class BezierError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Shape of a curve segment: output dimension m, relative degree gamma
/// (integrator chain length), polynomial degree p and duration T. The lifted
/// state stacks b, b', ..., b^(gamma-1) so its dimension is m * gamma.
struct BezierSpec
{
  int m = 2;
  int gamma = 2;
  int degree = 3;
  double duration = 1.0;

  /// Minimal-degree spec (p = 2 gamma - 1) used for boundary-value curves.
  static BezierSpec boundaryValue(int m, int gamma, double duration);

  int stateDim() const { return m * gamma; }
  int numPoints() const { return degree + 1; }
  BezierSpec withDuration(double T) const;
  void validate() const;
};

/// b(t) = points * z(t) with points of size m x (p+1).
struct BezierCurve
{
  BezierSpec spec;
  Mat points;

  Vec evaluate(double t) const;
};

/// Lifted control points: block k (rows k*m .. k*m+m-1) holds points * H^k.
struct StateSpaceCurve
{
  BezierSpec spec;
  Mat lifted;

  Vec evaluate(double t) const;
  /// Output-space control points (the first m rows).
  Mat positionPoints() const { return lifted.topRows(spec.m); }
  BezierCurve output() const { return BezierCurve{spec, positionPoints()}; }
  /// Control points of the gamma-th derivative at degree p.
  Mat inputPoints() const;
  Vec input(double t) const;
};

/// Bernstein weights z(t), t in [0, T].
Vec bernsteinEval(const BezierSpec& spec, double t);

/// (p+1) x (p+1) matrix with b'(t) = (points * H) z(t), built as the
/// degree-(p-1) difference operator followed by degree elevation back to p.
Mat derivativeMatrix(const BezierSpec& spec);

/// Scalar boundary-value map of shape (p+1) x 2 gamma: control points of
/// one output coordinate are D * [y(0), y'(0), ..., y^(g-1)(0), y(T), ...].
/// Requires p = 2 gamma - 1.
Mat boundaryMatrix(const BezierSpec& spec);

/// Unique minimal-degree curve with lifted state x0 at t=0 and xT at t=T.
BezierCurve boundaryCurve(const BezierSpec& spec, const Vec& x0, const Vec& xT);

/// Linear map L of shape (n*(p+1)) x 2n with vec(lifted) = L [x0; xT]
/// (column-major vec) for the boundary-value curve.
Mat liftedBoundaryMap(const BezierSpec& spec);

StateSpaceCurve lift(const BezierCurve& curve);

/// de Casteljau split at the given strictly increasing times in (0, T).
std::vector<BezierCurve> subdivide(const BezierCurve& curve,
                                   std::span<const double> times);

/// Sum of control-polygon edge lengths; an upper bound on arc length.
double pathLengthBound(const Mat& points);
double pathLengthBound(const BezierCurve& curve);

/// Time-stamped chain of segments. Segment i covers
/// [start_time(i), start_time(i) + segments[i].spec.duration].
struct Trajectory
{
  std::vector<StateSpaceCurve> segments;

  double duration() const;
  bool empty() const { return segments.empty(); }
  Vec state(double t) const;
  Vec input(double t) const;
  /// Lifted state at the end of the trajectory.
  Vec finalState() const;
};
}  // namespace bezgraph
