#include <bezgraph/qp.hpp>
#include <bezgraph/reachability.hpp>

#include <cassert>
#include <cmath>

namespace bezgraph
{
namespace
{
bool polytopeEmpty(const Polytope& P)
{
  if (P.box())
  {
    return false;
  }
  const int d = P.dim();
  qp::Problem prob;
  prob.P = qp::toSparse(Mat::Identity(d, d));
  prob.q = Vec::Zero(d);
  prob.A = qp::toSparse(P.A());
  prob.l = Vec::Constant(P.numConstraints(), -qp::kInfinity);
  prob.u = P.b();
  const auto sol = qp::solve(prob);
  return sol.status == qp::Status::Infeasible;
}
}  // namespace

TrackingTube TrackingTube::zero(int n, int m) { return {Box::zero(n), Box::zero(m)}; }

void TrackingTube::validate() const
{
  if (!state_error.contains(Vec::Zero(state_error.dim()), 0.0))
  {
    throw ReachabilityError("TrackingTube: state error box must contain the origin");
  }
  if (!input_margin.contains(Vec::Zero(input_margin.dim()), 0.0))
  {
    throw ReachabilityError("TrackingTube: input margin box must contain the origin");
  }
}

ReachOracle buildOracle(const BezierSpec& spec, const Polytope& Xd,
                        const Box& U, const TrackingTube& tube)
{
  spec.validate();
  const int n = spec.stateDim();
  const int m = spec.m;
  checkDim(n, Xd.dim(), "buildOracle: X_d");
  checkDim(m, U.dim(), "buildOracle: U");
  checkDim(n, tube.state_error.dim(), "buildOracle: tube state error");
  checkDim(m, tube.input_margin.dim(), "buildOracle: tube input margin");
  tube.validate();

  ReachOracle o{spec, Xd, U, tube, erode(Xd, tube.state_error),
                erodeRaw(U, tube.input_margin), Mat(), Vec()};
  if (o.eroded_Xd.box() ? isEmpty(*o.eroded_Xd.box()) : polytopeEmpty(o.eroded_Xd))
  {
    throw ReachabilityError("buildOracle: X_d eroded by the tracking tube is empty");
  }
  if (isEmpty(o.eroded_U))
  {
    throw ReachabilityError("buildOracle: U eroded by the input margin is empty");
  }

  const int np = spec.numPoints();
  const Mat L = liftedBoundaryMap(spec);
  const Mat H = derivativeMatrix(spec);
  const Mat& Ax = o.eroded_Xd.A();
  const Vec& bx = o.eroded_Xd.b();

  std::vector<Vec> rows;
  std::vector<double> rhs;
  auto push = [&](const Vec& row, double g) {
    if (row.lpNorm<Eigen::Infinity>() > 0.0)
    {
      rows.push_back(row);
      rhs.push_back(g);
    }
  };

  // Input rows first: they reject most candidate pairs, which lets the
  // batch kernel exit early.
  const int last = (spec.gamma - 1) * m;
  for (int j = 0; j < np; ++j)
  {
    Mat lin = Mat::Zero(m, 2 * n);
    for (int i = 0; i < np; ++i)
    {
      lin += H(i, j) * L.block(i * n + last, 0, m, 2 * n);
    }
    for (int k = 0; k < m; ++k)
    {
      if (std::isfinite(o.eroded_U.hi(k)))
      {
        push(lin.row(k).transpose(), o.eroded_U.hi(k));
      }
      if (std::isfinite(o.eroded_U.lo(k)))
      {
        push(-lin.row(k).transpose(), -o.eroded_U.lo(k));
      }
    }
  }
  // Interior lifted control points, then the endpoints.
  std::vector<int> order;
  for (int j = 1; j + 1 < np; ++j)
  {
    order.push_back(j);
  }
  order.push_back(0);
  if (np > 1)
  {
    order.push_back(np - 1);
  }
  for (int j : order)
  {
    const Mat Lj = L.middleRows(j * n, n);
    const Mat rowsj = Ax * Lj;
    for (int r = 0; r < rowsj.rows(); ++r)
    {
      if (std::isfinite(bx(r)))
      {
        push(rowsj.row(r).transpose(), bx(r));
      }
    }
  }

  o.F.resize(static_cast<int>(rows.size()), 2 * n);
  o.G.resize(static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
  {
    o.F.row(static_cast<int>(r)) = rows[r].transpose();
    o.G(static_cast<int>(r)) = rhs[r];
  }
  return o;
}

double edgeViolation(const ReachOracle& oracle, const Vec& x1, const Vec& x2)
{
  const int n = oracle.stateDim();
  checkDim(n, static_cast<int>(x1.size()), "checkEdge: x1");
  checkDim(n, static_cast<int>(x2.size()), "checkEdge: x2");
  const Vec v = oracle.F1() * x1 + oracle.F2() * x2 - oracle.G;
  return v.size() ? v.maxCoeff() : -std::numeric_limits<double>::infinity();
}

bool checkEdge(const ReachOracle& oracle, const Vec& x1, const Vec& x2, double eps)
{
  return edgeViolation(oracle, x1, x2) <= eps;
}

StateSpaceCurve connectCurve(const ReachOracle& oracle, const Vec& x1, const Vec& x2)
{
  if (!checkEdge(oracle, x1, x2))
  {
    throw ReachabilityError("connectCurve: endpoint pair is not reachable");
  }
  StateSpaceCurve curve = lift(boundaryCurve(oracle.spec, x1, x2));
  assert(curveSatisfiesOracleSets(oracle, curve, 1e-7));
  return curve;
}

bool curveSatisfiesOracleSets(const ReachOracle& oracle,
                              const StateSpaceCurve& curve, double eps)
{
  for (int j = 0; j < curve.lifted.cols(); ++j)
  {
    if (!contains(oracle.eroded_Xd, curve.lifted.col(j), eps))
    {
      return false;
    }
  }
  const Mat u = curve.inputPoints();
  for (int j = 0; j < u.cols(); ++j)
  {
    if (!oracle.eroded_U.contains(u.col(j), eps))
    {
      return false;
    }
  }
  return true;
}
}  // namespace bezgraph
