#pragma once

#include <bezgraph/bezier.hpp>
#include <bezgraph/geometry.hpp>

#include <stdexcept>

namespace bezgraph
{
class ReachabilityError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Worst-case tracking error box in the lifted state space together with the
/// share of the input box consumed by feedback.
struct TrackingTube
{
  Box state_error;
  Box input_margin;

  static TrackingTube zero(int n, int m);
  void validate() const;
};

/// Pairwise feasibility oracle: F [x1; x2] <= G certifies a boundary-value
/// curve from x1 to x2 whose lifted control points stay in Xd (-) E_bar and
/// whose input control points stay in U (-) input_margin.
struct ReachOracle
{
  BezierSpec spec;
  Polytope Xd;
  Box U;
  TrackingTube tube;

  Polytope eroded_Xd;
  Box eroded_U;

  Mat F;  // n_F x 2n
  Vec G;  // n_F

  int stateDim() const { return spec.stateDim(); }
  /// Left block of F (acts on x1).
  auto F1() const { return F.leftCols(spec.stateDim()); }
  /// Right block of F (acts on x2).
  auto F2() const { return F.rightCols(spec.stateDim()); }
};

/// Throws ReachabilityError when the eroded state or input set is empty.
ReachOracle buildOracle(const BezierSpec& spec, const Polytope& Xd,
                        const Box& U, const TrackingTube& tube);

bool checkEdge(const ReachOracle& oracle, const Vec& x1, const Vec& x2,
               double eps = kGeometryEps);

/// Largest violation of F [x1; x2] <= G (negative when strictly feasible).
double edgeViolation(const ReachOracle& oracle, const Vec& x1, const Vec& x2);

/// Boundary-value curve for a feasible pair. Throws ReachabilityError when
/// the pair fails checkEdge.
StateSpaceCurve connectCurve(const ReachOracle& oracle, const Vec& x1,
                             const Vec& x2);

/// Direct check of the curve against the eroded sets (independent of F, G).
bool curveSatisfiesOracleSets(const ReachOracle& oracle,
                              const StateSpaceCurve& curve, double eps = 1e-9);
}  // namespace bezgraph
