#include <bezgraph/mpc.hpp>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bezgraph
{
namespace
{
double factorial(int k)
{
  double f = 1.0;
  for (int i = 2; i <= k; ++i)
  {
    f *= i;
  }
  return f;
}

double binomial(int n, int k)
{
  return factorial(n) / (factorial(k) * factorial(n - k));
}

void checkSquare(const Mat& M, int n, const char* name)
{
  if (M.rows() != n || M.cols() != n)
  {
    throw MpcError(std::string("MpcWeights: ") + name + " must be " + std::to_string(n) +
                   " x " + std::to_string(n));
  }
  if (!M.allFinite() || (M - M.transpose()).lpNorm<Eigen::Infinity>() > 1e-12 * (1.0 + M.norm()))
  {
    throw MpcError(std::string("MpcWeights: ") + name + " must be finite and symmetric");
  }
}

bool isPsd(const Mat& M, double shift)
{
  Eigen::LDLT<Mat> ldlt{Mat(M + shift * Mat::Identity(M.rows(), M.cols()))};
  return ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all();
}

/// Output control points of piece [x0; x1] as a stacked (p+1)m x 2n map.
Mat positionMap(const BezierSpec& spec)
{
  const Mat L = liftedBoundaryMap(spec);
  const int n = spec.stateDim();
  const int m = spec.m;
  const int np = spec.numPoints();
  Mat P(np * m, 2 * n);
  for (int j = 0; j < np; ++j)
  {
    P.middleRows(j * m, m) = L.block(j * n, 0, m, 2 * n);
  }
  return P;
}

Mat piecePositions(const Mat& Pmap, int m, const Vec& x0, const Vec& x1)
{
  Vec xx(x0.size() + x1.size());
  xx << x0, x1;
  const Vec flat = Pmap * xx;
  return Eigen::Map<const Mat>(flat.data(), m, flat.size() / m);
}

/// max over y in P of normal . y, for bounded obstacles.
double supportOf(const Polytope& P, const Vec& normal)
{
  if (P.box())
  {
    return P.box()->support(normal);
  }
  const auto verts = enumerateVertices(P);
  if (verts.empty())
  {
    throw CorridorError("buildCorridor: obstacle has no vertices");
  }
  double s = -std::numeric_limits<double>::infinity();
  for (const auto& v : verts)
  {
    s = std::max(s, normal.dot(v));
  }
  return s;
}

void checkStates(std::span<const Vec> states, int n, const char* what)
{
  for (const auto& x : states)
  {
    checkDim(n, static_cast<int>(x.size()), what);
  }
}
}  // namespace

MpcWeights MpcWeights::defaults(int m, int gamma)
{
  const int n = m * gamma;
  MpcWeights w;
  w.Q = Mat::Identity(n, n);
  w.Fw = Mat::Zero(n, n);
  w.Fw.topLeftCorner(m, m).setIdentity();
  w.Fw *= 50.0;
  w.R = 0.01 * Mat::Identity(m, m);
  w.V = Mat::Zero(n, n);
  return w;
}

void MpcWeights::validate(int n, int m) const
{
  checkSquare(Q, n, "Q");
  checkSquare(Fw, n, "Fw");
  checkSquare(R, m, "R");
  checkSquare(V, n, "V");
  const double tol = 1e-12;
  if (!isPsd(Q, tol) || !isPsd(Fw, tol) || !isPsd(V, tol))
  {
    throw MpcError("MpcWeights: Q, Fw and V must be positive semidefinite");
  }
  if (!isPsd(R, -1e-14))
  {
    throw MpcError("MpcWeights: R must be positive definite");
  }
}

Discretization discretize(const BezierSpec& spec, double h)
{
  if (!(h >= 0.0) || !std::isfinite(h))
  {
    throw MpcError("discretize: h must be nonnegative");
  }
  const int m = spec.m;
  const int g = spec.gamma;
  const int n = m * g;
  Discretization d{Mat::Zero(n, n), Mat::Zero(n, m)};
  const Mat I = Mat::Identity(m, m);
  for (int i = 0; i < g; ++i)
  {
    for (int j = i; j < g; ++j)
    {
      d.A.block(i * m, j * m, m, m) = std::pow(h, j - i) / factorial(j - i) * I;
    }
    d.B.block(i * m, 0, m, m) = std::pow(h, g - i) / factorial(g - i) * I;
  }
  return d;
}

Discretization discretizeBernstein(const BezierSpec& spec, double h)
{
  Discretization d = discretize(spec, h);
  const int m = spec.m;
  const int g = spec.gamma;
  const int q = g - 1;
  d.B = Mat::Zero(m * g, m * g);
  const Mat I = Mat::Identity(m, m);
  // Block i of e^{A(h-s)} B is (h-s)^a / a! with a = g-1-i; integrating
  // against the Bernstein weight gives a Beta function.
  for (int i = 0; i < g; ++i)
  {
    const int a = g - 1 - i;
    for (int j = 0; j <= q; ++j)
    {
      const double beta = factorial(j) * factorial(q - j + a) / factorial(q + a + 1);
      const double w = binomial(q, j) * beta * std::pow(h, a + 1) / factorial(a);
      d.B.block(i * m, j * m, m, m) = w * I;
    }
  }
  return d;
}

std::vector<Vec> buildReference(std::span<const Vec> path_states, const BezierSpec& spec,
                                double h)
{
  if (path_states.empty())
  {
    throw MpcError("buildReference: empty path");
  }
  if (!(h > 0.0))
  {
    throw MpcError("buildReference: h must be positive");
  }
  const int n = spec.stateDim();
  checkStates(path_states, n, "buildReference");
  const double ratio = spec.duration / h;
  const int steps = static_cast<int>(std::lround(ratio));
  if (steps < 1 || std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio))
  {
    throw MpcError("buildReference: segment duration must be an integer multiple of h");
  }
  std::vector<Vec> ref;
  ref.reserve(path_states.size() * steps + 1);
  ref.push_back(path_states[0]);
  for (std::size_t i = 0; i + 1 < path_states.size(); ++i)
  {
    const StateSpaceCurve c = lift(boundaryCurve(spec, path_states[i], path_states[i + 1]));
    for (int k = 1; k < steps; ++k)
    {
      ref.push_back(c.evaluate(k * spec.duration / steps));
    }
    ref.push_back(path_states[i + 1]);
  }
  return ref;
}

bool isStationary(const Vec& x, int m, double eps)
{
  return x.size() <= m || x.tail(x.size() - m).lpNorm<Eigen::Infinity>() <= eps;
}

std::vector<Vec> padReference(std::vector<Vec> reference, std::size_t length, int m)
{
  if (reference.empty())
  {
    throw MpcError("padReference: empty reference");
  }
  if (reference.size() < length && !isStationary(reference.back(), m))
  {
    throw MpcError("padReference: final state is not stationary");
  }
  while (reference.size() < length)
  {
    reference.push_back(reference.back());
  }
  return reference;
}

std::size_t Corridor::numPlanes() const
{
  std::size_t c = 0;
  for (const auto& p : planes)
  {
    c += p.size();
  }
  return c;
}

namespace
{
/// Separating-axis candidates: the obstacle face normals and, in the plane,
/// the normals of every pair of hull points. Returns the axis with the
/// largest gap min(n . pts) - support(O, n).
Hyperplane bestSeparatingAxis(const Mat& pts, const Polytope& O)
{
  std::vector<Vec> axes;
  for (int i = 0; i < O.numConstraints(); ++i)
  {
    axes.push_back(O.A().row(i).transpose().normalized());
  }
  if (pts.rows() == 2)
  {
    for (int i = 0; i < pts.cols(); ++i)
    {
      for (int j = i + 1; j < pts.cols(); ++j)
      {
        const Vec e = pts.col(j) - pts.col(i);
        if (e.norm() == 0.0)
        {
          continue;
        }
        Vec n(2);
        n << e(1), -e(0);
        n.normalize();
        axes.push_back(n);
        axes.push_back(-n);
      }
    }
  }
  Hyperplane best;
  double best_gap = -std::numeric_limits<double>::infinity();
  for (const Vec& n : axes)
  {
    const double offset = supportOf(O, n);
    const double gap = (n.transpose() * pts).minCoeff() - offset;
    if (gap > best_gap)
    {
      best_gap = gap;
      best.normal = n;
      best.offset = offset;
    }
  }
  return best;
}
}  // namespace

Corridor buildCorridor(std::span<const Vec> warm, const BezierSpec& step_spec,
                       std::span<const Polytope> inflated_obstacles, double trust_radius)
{
  if (warm.size() < 2)
  {
    throw MpcError("buildCorridor: need at least two states");
  }
  if (!(trust_radius > 0.0))
  {
    throw MpcError("buildCorridor: trust radius must be positive");
  }
  const int m = step_spec.m;
  checkStates(warm, step_spec.stateDim(), "buildCorridor");
  std::vector<Polytope> obstacles;
  std::vector<Box> bounds;
  for (const auto& o : inflated_obstacles)
  {
    checkDim(m, o.dim(), "buildCorridor: obstacle");
    obstacles.push_back(o.normalized());
    bounds.push_back(boundingBox(o));
  }
  const Mat Pmap = positionMap(step_spec);
  const std::size_t steps = warm.size() - 1;
  Corridor c;
  c.planes.resize(steps);
  c.trust.resize(steps);
  for (std::size_t k = 0; k < steps; ++k)
  {
    const Mat pts = piecePositions(Pmap, m, warm[k], warm[k + 1]);
    const Vec lo = pts.rowwise().minCoeff();
    const Vec hi = pts.rowwise().maxCoeff();
    const Vec r = Vec::Constant(m, trust_radius);
    c.trust[k] = Box(lo - r, hi + r);
    for (std::size_t o = 0; o < obstacles.size(); ++o)
    {
      if (!c.trust[k].intersects(bounds[o]))
      {
        continue;
      }
      const Polytope& O = obstacles[o];
      std::optional<Hyperplane> plane;
      const Vec w = warm[k].head(m);
      if (!contains(O, w))
      {
        Hyperplane face = adjacentHyperplane(O, w);
        bool separates = true;
        for (int j = 0; j < pts.cols() && separates; ++j)
        {
          separates = face.signedDistance(pts.col(j)) >= 0.0;
        }
        if (separates)
        {
          plane = face;
        }
      }
      if (!plane)
      {
        const HullDistance hd = hullPolytopeDistance(pts, O);
        if (hd.distance <= kGeometryEps)
        {
          throw CorridorError("buildCorridor: step " + std::to_string(k) +
                              " touches obstacle " + std::to_string(o));
        }
        Hyperplane sep;
        sep.normal = (hd.hull_point - hd.polytope_point) / hd.distance;
        sep.offset = supportOf(O, sep.normal);
        if ((sep.normal.transpose() * pts).minCoeff() < sep.offset)
        {
          // The distance normal is inexact for near-touching pairs.
          sep = bestSeparatingAxis(pts, O);
          if ((sep.normal.transpose() * pts).minCoeff() < sep.offset)
          {
            throw CorridorError("buildCorridor: no separating plane at step " + std::to_string(k));
          }
        }
        plane = sep;
      }
      c.planes[k].push_back(*plane);
    }
  }
  return c;
}

MpcProblem buildMpcProblem(std::span<const Vec> reference, std::span<const Vec> warm,
                           const Box& initial_set, const ReachOracle& step_oracle,
                           std::span<const Polytope> inflated_obstacles,
                           const MpcConfig& config)
{
  if (reference.size() < 2)
  {
    throw MpcError("buildMpcProblem: reference needs at least two states");
  }
  if (warm.size() != reference.size())
  {
    throw MpcError("buildMpcProblem: warm start and reference lengths differ");
  }
  const BezierSpec& spec = step_oracle.spec;
  if (std::abs(spec.duration - config.h) > 1e-12 * std::max(1.0, config.h))
  {
    throw MpcError("buildMpcProblem: oracle duration must equal h");
  }
  const int n = spec.stateDim();
  checkStates(reference, n, "buildMpcProblem: reference");
  checkDim(n, initial_set.dim(), "buildMpcProblem: initial set");
  config.weights.validate(n, spec.m);

  MpcProblem p;
  p.horizon = static_cast<int>(reference.size()) - 1;
  p.h = config.h;
  p.step_spec = spec;
  p.dynamics = discretizeBernstein(spec, config.h);
  p.reference.assign(reference.begin(), reference.end());
  p.warm.assign(warm.begin(), warm.end());
  p.initial_set = initial_set;
  p.corridor = buildCorridor(warm, spec, inflated_obstacles, config.trust_radius);
  p.oracle = step_oracle;
  p.weights = config.weights;
  return p;
}

std::vector<Vec> inputsFor(const MpcProblem& problem, std::span<const Vec> states)
{
  const auto& A = problem.dynamics.A;
  const Eigen::ColPivHouseholderQR<Mat> qr(problem.dynamics.B);
  std::vector<Vec> u;
  for (std::size_t k = 0; k + 1 < states.size(); ++k)
  {
    u.push_back(qr.solve(Vec(states[k + 1] - A * states[k])));
  }
  return u;
}

double mpcObjective(const MpcProblem& p, std::span<const Vec> x, std::span<const Vec> u)
{
  const auto& w = p.weights;
  const int N = p.horizon;
  const int g = p.step_spec.gamma;
  const int m = p.step_spec.m;
  double J = 0.0;
  for (int k = 0; k < N; ++k)
  {
    const Vec e = x[k] - p.reference[k];
    const Vec d = x[k + 1] - x[k];
    J += e.dot(w.Q * e) + d.dot(w.Fw * d);
    for (int j = 0; j < g; ++j)
    {
      const Vec uj = u[k].segment(j * m, m);
      J += uj.dot(w.R * uj);
    }
  }
  const Vec eN = x[N] - p.reference[N];
  return J + eN.dot(w.V * eN);
}

double ConstraintReport::worst() const
{
  return std::max({dynamics, initial, oracle, corridor, trust, terminal});
}

ConstraintReport checkMpcConstraints(const MpcProblem& p, std::span<const Vec> x,
                                     std::span<const Vec> u)
{
  const int N = p.horizon;
  if (static_cast<int>(x.size()) != N + 1 || static_cast<int>(u.size()) != N)
  {
    throw MpcError("checkMpcConstraints: wrong sequence lengths");
  }
  ConstraintReport r;
  const int m = p.step_spec.m;
  const Mat Pmap = positionMap(p.step_spec);
  for (int k = 0; k < N; ++k)
  {
    const Vec dyn = p.dynamics.A * x[k] + p.dynamics.B * u[k] - x[k + 1];
    r.dynamics = std::max(r.dynamics, dyn.lpNorm<Eigen::Infinity>());
    r.oracle = std::max(r.oracle, edgeViolation(p.oracle, x[k], x[k + 1]));
    const Mat pts = piecePositions(Pmap, m, x[k], x[k + 1]);
    for (const auto& h : p.corridor.planes[k])
    {
      for (int j = 0; j < pts.cols(); ++j)
      {
        r.corridor = std::max(r.corridor, -h.signedDistance(pts.col(j)));
      }
    }
    const Box& t = p.corridor.trust[k];
    for (int j = 0; j < pts.cols(); ++j)
    {
      r.trust = std::max(r.trust, (t.lo - pts.col(j)).maxCoeff());
      r.trust = std::max(r.trust, (pts.col(j) - t.hi).maxCoeff());
    }
  }
  r.initial = std::max({0.0, (p.initial_set.lo - x[0]).maxCoeff(),
                        (x[0] - p.initial_set.hi).maxCoeff()});
  r.terminal = (x[N] - p.reference[N]).lpNorm<Eigen::Infinity>();
  r.oracle = std::max(r.oracle, 0.0);
  return r;
}

std::vector<StateSpaceCurve> piecesFor(const BezierSpec& step_spec, std::span<const Vec> states)
{
  std::vector<StateSpaceCurve> out;
  for (std::size_t k = 0; k + 1 < states.size(); ++k)
  {
    out.push_back(lift(boundaryCurve(step_spec, states[k], states[k + 1])));
  }
  return out;
}

double piecewiseLengthBound(const BezierSpec& step_spec, std::span<const Vec> states)
{
  double len = 0.0;
  for (const auto& c : piecesFor(step_spec, states))
  {
    len += pathLengthBound(c.positionPoints());
  }
  return len;
}

MpcSolution solveMpc(const MpcProblem& p, const qp::Settings& settings, double verify_tol)
{
  const int N = p.horizon;
  const int n = p.step_spec.stateDim();
  const int m = p.step_spec.m;
  const int g = p.step_spec.gamma;
  const int nu = m * g;
  const int nx = (N + 1) * n;
  const int nv = nx + N * nu;
  auto xi = [&](int k) { return k * n; };
  auto ui = [&](int k) { return nx + k * nu; };
  const auto& w = p.weights;

  std::vector<Eigen::Triplet<double>> pt;
  Vec q = Vec::Zero(nv);
  auto addBlock = [&](int r0, int c0, const Mat& B, double s) {
    for (int i = 0; i < B.rows(); ++i)
    {
      for (int j = 0; j < B.cols(); ++j)
      {
        if (B(i, j) != 0.0)
        {
          pt.emplace_back(r0 + i, c0 + j, s * B(i, j));
        }
      }
    }
  };
  for (int k = 0; k < N; ++k)
  {
    addBlock(xi(k), xi(k), w.Q, 2.0);
    q.segment(xi(k), n) -= 2.0 * w.Q * p.reference[k];
    addBlock(xi(k), xi(k), w.Fw, 2.0);
    addBlock(xi(k + 1), xi(k + 1), w.Fw, 2.0);
    addBlock(xi(k), xi(k + 1), w.Fw, -2.0);
    addBlock(xi(k + 1), xi(k), w.Fw, -2.0);
    for (int j = 0; j < g; ++j)
    {
      addBlock(ui(k) + j * m, ui(k) + j * m, w.R, 2.0);
    }
  }
  addBlock(xi(N), xi(N), w.V, 2.0);
  q.segment(xi(N), n) -= 2.0 * w.V * p.reference[N];
  qp::SparseMat P(nv, nv);
  P.setFromTriplets(pt.begin(), pt.end());

  std::vector<Eigen::Triplet<double>> at;
  std::vector<double> lo, hi;
  int row = 0;
  auto addRow = [&](double l, double u) {
    lo.push_back(l);
    hi.push_back(u);
    return row++;
  };
  auto addRowBlock = [&](int r0, int c0, const Mat& B) {
    for (int i = 0; i < B.rows(); ++i)
    {
      for (int j = 0; j < B.cols(); ++j)
      {
        if (B(i, j) != 0.0)
        {
          at.emplace_back(r0 + i, c0 + j, B(i, j));
        }
      }
    }
  };

  // dynamics
  for (int k = 0; k < N; ++k)
  {
    const int r0 = row;
    for (int i = 0; i < n; ++i)
    {
      addRow(0.0, 0.0);
    }
    addRowBlock(r0, xi(k), p.dynamics.A);
    addRowBlock(r0, ui(k), p.dynamics.B);
    addRowBlock(r0, xi(k + 1), -Mat::Identity(n, n));
  }
  // initial set and terminal anchor
  for (int i = 0; i < n; ++i)
  {
    at.emplace_back(addRow(p.initial_set.lo(i), p.initial_set.hi(i)), xi(0) + i, 1.0);
  }
  for (int i = 0; i < n; ++i)
  {
    at.emplace_back(addRow(p.reference[N](i), p.reference[N](i)), xi(N) + i, 1.0);
  }
  // oracle rows
  const Mat F1 = p.oracle.F1();
  const Mat F2 = p.oracle.F2();
  const int nF = static_cast<int>(p.oracle.G.size());
  for (int k = 0; k < N; ++k)
  {
    const int r0 = row;
    for (int i = 0; i < nF; ++i)
    {
      addRow(-qp::kInfinity, p.oracle.G(i));
    }
    addRowBlock(r0, xi(k), F1);
    addRowBlock(r0, xi(k + 1), F2);
  }
  // corridor and trust box on output control points
  const Mat Pmap = positionMap(p.step_spec);
  const int np = p.step_spec.numPoints();
  for (int k = 0; k < N; ++k)
  {
    for (const auto& h : p.corridor.planes[k])
    {
      for (int j = 0; j < np; ++j)
      {
        const Mat rowv = h.normal.transpose() * Pmap.middleRows(j * m, m);
        const int r = addRow(h.offset, qp::kInfinity);
        addRowBlock(r, xi(k), rowv.leftCols(n));
        addRowBlock(r, xi(k + 1), rowv.rightCols(n));
      }
    }
    const Box& t = p.corridor.trust[k];
    for (int j = 0; j < np; ++j)
    {
      const int r0 = row;
      for (int i = 0; i < m; ++i)
      {
        addRow(t.lo(i), t.hi(i));
      }
      const Mat blk = Pmap.middleRows(j * m, m);
      addRowBlock(r0, xi(k), blk.leftCols(n));
      addRowBlock(r0, xi(k + 1), blk.rightCols(n));
    }
  }

  qp::Problem prob;
  prob.P = P;
  prob.q = q;
  prob.A = qp::SparseMat(row, nv);
  prob.A.setFromTriplets(at.begin(), at.end());
  prob.l = Eigen::Map<const Vec>(lo.data(), row);
  prob.u = Eigen::Map<const Vec>(hi.data(), row);

  qp::WarmStart ws;
  ws.x = Vec::Zero(nv);
  const std::vector<Vec> warm_u = inputsFor(p, p.warm);
  for (int k = 0; k <= N; ++k)
  {
    ws.x.segment(xi(k), n) = p.warm[k];
  }
  for (int k = 0; k < N; ++k)
  {
    ws.x.segment(ui(k), nu) = warm_u[k];
  }
  ws.y = Vec::Zero(row);

  const qp::Solution sol = qp::solve(prob, settings, ws);
  MpcSolution out;
  out.status = sol.status;
  out.iterations = sol.iterations;
  out.message = sol.message;
  if (sol.x.size() != nv || !sol.x.allFinite())
  {
    out.message = "solver returned no iterate";
    return out;
  }
  for (int k = 0; k <= N; ++k)
  {
    out.states.push_back(sol.x.segment(xi(k), n));
  }
  for (int k = 0; k < N; ++k)
  {
    out.inputs.push_back(sol.x.segment(ui(k), nu));
  }
  const ConstraintReport rep = checkMpcConstraints(p, out.states, out.inputs);
  out.verified = sol.status == qp::Status::Solved && rep.worst() <= verify_tol;
  if (out.verified)
  {
    // Remove the anchor residual so consecutive cycles chain exactly.
    out.states[N] = p.reference[N];
    out.inputs[N - 1] = inputsFor(p, std::span<const Vec>(out.states).subspan(N - 1, 2))[0];
    out.curve = piecesFor(p.step_spec, out.states);
  }
  else if (out.message.empty())
  {
    out.message = "constraint check failed by " + std::to_string(rep.worst());
  }
  out.objective = mpcObjective(p, out.states, out.inputs);
  out.objective_history.push_back(out.objective);
  return out;
}

MpcSolution sqpRefine(const MpcProblem& problem, std::span<const Polytope> inflated_obstacles,
                      const MpcConfig& config)
{
  if (config.sqp_iters < 1)
  {
    throw MpcError("sqpRefine: iterations must be at least 1");
  }
  MpcSolution best = solveMpc(problem, config.qp, config.verify_tol);
  if (!best.verified)
  {
    return best;
  }
  MpcProblem cur = problem;
  for (int it = 1; it < config.sqp_iters; ++it)
  {
    try
    {
      cur.warm = best.states;
      cur.corridor = buildCorridor(cur.warm, cur.step_spec, inflated_obstacles,
                                   config.trust_radius);
    }
    catch (const CorridorError&)
    {
      break;
    }
    MpcSolution next = solveMpc(cur, config.qp, config.verify_tol);
    if (!next.verified || next.objective > best.objective + 1e-12 * (1.0 + std::abs(best.objective)))
    {
      break;
    }
    next.objective_history = best.objective_history;
    next.objective_history.push_back(next.objective);
    best = std::move(next);
  }
  return best;
}
}  // namespace bezgraph
