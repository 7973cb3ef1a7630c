#include <bezgraph/bezier.hpp>

#include <Eigen/LU>

#include <cmath>
#include <string>

namespace bezgraph
{
namespace
{
double binomial(int n, int k)
{
  double r = 1.0;
  for (int i = 1; i <= k; ++i)
  {
    r = r * (n - k + i) / i;
  }
  return r;
}

/// de Casteljau evaluation at normalized time s of an arbitrary point matrix.
Vec deCasteljau(const Mat& points, double s)
{
  Mat work = points;
  const int p = static_cast<int>(points.cols()) - 1;
  for (int r = 1; r <= p; ++r)
  {
    for (int j = 0; j <= p - r; ++j)
    {
      work.col(j) = (1.0 - s) * work.col(j) + s * work.col(j + 1);
    }
  }
  return work.col(0);
}

void checkTime(const BezierSpec& spec, double t)
{
  const double tol = 1e-12 * std::max(1.0, spec.duration);
  if (!(t >= -tol && t <= spec.duration + tol))
  {
    throw BezierError("time " + std::to_string(t) + " outside [0, " +
                      std::to_string(spec.duration) + "]");
  }
}

double normalized(const BezierSpec& spec, double t)
{
  return std::clamp(t / spec.duration, 0.0, 1.0);
}
}  // namespace

BezierSpec BezierSpec::boundaryValue(int m, int gamma, double duration)
{
  BezierSpec s{m, gamma, 2 * gamma - 1, duration};
  s.validate();
  return s;
}

BezierSpec BezierSpec::withDuration(double T) const
{
  BezierSpec s = *this;
  s.duration = T;
  s.validate();
  return s;
}

void BezierSpec::validate() const
{
  if (m < 1)
  {
    throw BezierError("BezierSpec: output dimension must be >= 1");
  }
  if (gamma < 1 || degree < gamma)
  {
    throw BezierError("BezierSpec: need degree >= gamma >= 1");
  }
  if (!(duration > 0.0) || !std::isfinite(duration))
  {
    throw BezierError("BezierSpec: duration must be positive");
  }
}

Vec BezierCurve::evaluate(double t) const
{
  checkTime(spec, t);
  return deCasteljau(points, normalized(spec, t));
}

Vec StateSpaceCurve::evaluate(double t) const
{
  checkTime(spec, t);
  return deCasteljau(lifted, normalized(spec, t));
}

Mat StateSpaceCurve::inputPoints() const
{
  const Mat H = derivativeMatrix(spec);
  const int m = spec.m;
  // block gamma-1 times H is the gamma-th derivative.
  return lifted.middleRows((spec.gamma - 1) * m, m) * H;
}

Vec StateSpaceCurve::input(double t) const
{
  checkTime(spec, t);
  return deCasteljau(inputPoints(), normalized(spec, t));
}

Vec bernsteinEval(const BezierSpec& spec, double t)
{
  checkTime(spec, t);
  const double s = normalized(spec, t);
  const int p = spec.degree;
  Vec z(p + 1);
  for (int i = 0; i <= p; ++i)
  {
    z(i) = binomial(p, i) * std::pow(s, i) * std::pow(1.0 - s, p - i);
  }
  return z;
}

Mat derivativeMatrix(const BezierSpec& spec)
{
  spec.validate();
  const int p = spec.degree;
  // Delta: (p+1) x p, column j gives (p/T)(P_{j+1} - P_j).
  Mat delta = Mat::Zero(p + 1, p);
  const double scale = p / spec.duration;
  for (int j = 0; j < p; ++j)
  {
    delta(j, j) = -scale;
    delta(j + 1, j) = scale;
  }
  // Elevation from degree p-1 to p: e_i = (i/p) d_{i-1} + (1 - i/p) d_i.
  Mat elevate = Mat::Zero(p, p + 1);
  for (int i = 0; i <= p; ++i)
  {
    const double a = static_cast<double>(i) / p;
    if (i >= 1)
    {
      elevate(i - 1, i) = a;
    }
    if (i <= p - 1)
    {
      elevate(i, i) = 1.0 - a;
    }
  }
  return delta * elevate;
}

Mat boundaryMatrix(const BezierSpec& spec)
{
  spec.validate();
  const int g = spec.gamma;
  const int p = spec.degree;
  if (p != 2 * g - 1)
  {
    throw BezierError("boundaryMatrix: requires degree = 2*gamma - 1");
  }
  const Mat H = derivativeMatrix(spec);
  // Evaluation matrix: column k gives the k-th derivative at t=0 (k < g) or
  // t=T (k >= g) of a scalar curve with control points c: c * E.
  Mat E(p + 1, 2 * g);
  Mat Hk = Mat::Identity(p + 1, p + 1);
  for (int k = 0; k < g; ++k)
  {
    E.col(k) = Hk.col(0);
    E.col(g + k) = Hk.col(p);
    Hk = Hk * H;
  }
  // c^T = D y with c E = y^T  =>  D = E^{-T}.
  Eigen::FullPivLU<Mat> lu(E.transpose());
  if (!lu.isInvertible())
  {
    throw BezierError("boundaryMatrix: singular boundary system");
  }
  return lu.inverse();
}

BezierCurve boundaryCurve(const BezierSpec& spec, const Vec& x0, const Vec& xT)
{
  const int n = spec.stateDim();
  if (x0.size() != n || xT.size() != n)
  {
    throw BezierError("boundaryCurve: state dimension mismatch");
  }
  const Mat D = boundaryMatrix(spec);
  const int g = spec.gamma;
  const int m = spec.m;
  Mat points(m, spec.numPoints());
  Vec y(2 * g);
  for (int i = 0; i < m; ++i)
  {
    for (int k = 0; k < g; ++k)
    {
      y(k) = x0(k * m + i);
      y(g + k) = xT(k * m + i);
    }
    points.row(i) = (D * y).transpose();
  }
  return BezierCurve{spec, points};
}

Mat liftedBoundaryMap(const BezierSpec& spec)
{
  const int n = spec.stateDim();
  const int np = spec.numPoints();
  Mat L(n * np, 2 * n);
  for (int c = 0; c < 2 * n; ++c)
  {
    Vec x0 = Vec::Zero(n), xT = Vec::Zero(n);
    if (c < n)
    {
      x0(c) = 1.0;
    }
    else
    {
      xT(c - n) = 1.0;
    }
    const Mat lifted = lift(boundaryCurve(spec, x0, xT)).lifted;
    L.col(c) = Eigen::Map<const Vec>(lifted.data(), n * np);
  }
  return L;
}

StateSpaceCurve lift(const BezierCurve& curve)
{
  const BezierSpec& spec = curve.spec;
  const int m = spec.m;
  if (curve.points.rows() != m || curve.points.cols() != spec.numPoints())
  {
    throw BezierError("lift: control point matrix has the wrong shape");
  }
  const Mat H = derivativeMatrix(spec);
  Mat lifted(spec.stateDim(), spec.numPoints());
  Mat block = curve.points;
  for (int k = 0; k < spec.gamma; ++k)
  {
    lifted.middleRows(k * m, m) = block;
    block = block * H;
  }
  return StateSpaceCurve{spec, lifted};
}

std::vector<BezierCurve> subdivide(const BezierCurve& curve,
                                   std::span<const double> times)
{
  const double T = curve.spec.duration;
  double prev = 0.0;
  for (double t : times)
  {
    if (!(t > prev) || !(t < T))
    {
      throw BezierError("subdivide: split times must be strictly increasing in (0, T)");
    }
    prev = t;
  }
  std::vector<BezierCurve> pieces;
  Mat rest = curve.points;
  double rest_start = 0.0;
  const int p = curve.spec.degree;
  for (double t : times)
  {
    const double span = T - rest_start;
    const double s = (t - rest_start) / span;
    // de Casteljau triangle: left = first entries, right = last entries.
    Mat left(rest.rows(), p + 1), right(rest.rows(), p + 1);
    Mat work = rest;
    left.col(0) = work.col(0);
    right.col(p) = work.col(p);
    for (int r = 1; r <= p; ++r)
    {
      for (int j = 0; j <= p - r; ++j)
      {
        work.col(j) = (1.0 - s) * work.col(j) + s * work.col(j + 1);
      }
      left.col(r) = work.col(0);
      right.col(p - r) = work.col(p - r);
    }
    pieces.push_back(BezierCurve{curve.spec.withDuration(t - rest_start), left});
    rest = right;
    rest_start = t;
  }
  pieces.push_back(BezierCurve{curve.spec.withDuration(T - rest_start), rest});
  return pieces;
}

double pathLengthBound(const Mat& points)
{
  double total = 0.0;
  for (int j = 0; j + 1 < points.cols(); ++j)
  {
    total += (points.col(j + 1) - points.col(j)).norm();
  }
  return total;
}

double pathLengthBound(const BezierCurve& curve) { return pathLengthBound(curve.points); }

double Trajectory::duration() const
{
  double d = 0.0;
  for (const auto& s : segments)
  {
    d += s.spec.duration;
  }
  return d;
}

namespace
{
template <typename Fn>
Vec atTime(const std::vector<StateSpaceCurve>& segs, double t, Fn&& fn)
{
  if (segs.empty())
  {
    throw BezierError("Trajectory: empty");
  }
  double start = 0.0;
  for (std::size_t i = 0; i < segs.size(); ++i)
  {
    const double d = segs[i].spec.duration;
    if (t <= start + d || i + 1 == segs.size())
    {
      return fn(segs[i], std::clamp(t - start, 0.0, d));
    }
    start += d;
  }
  return fn(segs.back(), segs.back().spec.duration);
}
}  // namespace

Vec Trajectory::state(double t) const
{
  return atTime(segments, t, [](const StateSpaceCurve& c, double tau) { return c.evaluate(tau); });
}

Vec Trajectory::input(double t) const
{
  return atTime(segments, t, [](const StateSpaceCurve& c, double tau) { return c.input(tau); });
}

Vec Trajectory::finalState() const
{
  if (segments.empty())
  {
    throw BezierError("Trajectory: empty");
  }
  return segments.back().lifted.col(segments.back().spec.degree);
}
}  // namespace bezgraph
