#include <bezgraph/geometry.hpp>
#include <bezgraph/qp.hpp>

#include <Eigen/LU>

#include <atomic>
#include <cmath>
#include <limits>

namespace bezgraph
{
namespace
{
std::atomic<int> g_workers{0};

double rowNorm(const Mat& A, int i) { return A.row(i).norm(); }

/// Returns the box when every row is +-e_k and each face appears once.
std::optional<Box> detectBox(const Mat& A, const Vec& b)
{
  const int d = static_cast<int>(A.cols());
  if (A.rows() != 2 * d)
  {
    return std::nullopt;
  }
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::quiet_NaN());
  Vec hi = lo;
  for (int i = 0; i < A.rows(); ++i)
  {
    int axis = -1;
    double coeff = 0.0;
    for (int k = 0; k < d; ++k)
    {
      if (A(i, k) != 0.0)
      {
        if (axis >= 0)
        {
          return std::nullopt;
        }
        axis = k;
        coeff = A(i, k);
      }
    }
    if (axis < 0)
    {
      return std::nullopt;
    }
    if (coeff > 0.0)
    {
      if (!std::isnan(hi(axis)))
      {
        return std::nullopt;
      }
      hi(axis) = b(i) / coeff;
    }
    else
    {
      if (!std::isnan(lo(axis)))
      {
        return std::nullopt;
      }
      lo(axis) = b(i) / coeff;
    }
  }
  if (lo.hasNaN() || hi.hasNaN() || (lo.array() > hi.array()).any())
  {
    return std::nullopt;
  }
  return Box(lo, hi);
}
}  // namespace

int workerCount()
{
  const int configured = g_workers.load();
  if (configured > 0)
  {
    return configured;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void setWorkerCount(int count) { g_workers.store(count); }

void checkDim(int expected, int actual, const char* what)
{
  if (expected != actual)
  {
    throw GeometryError(std::string(what) + ": dimension mismatch (expected " +
                        std::to_string(expected) + ", got " +
                        std::to_string(actual) + ")");
  }
}

Box::Box(Vec lower, Vec upper) : lo(std::move(lower)), hi(std::move(upper))
{
  checkDim(static_cast<int>(lo.size()), static_cast<int>(hi.size()), "Box");
}

Box Box::point(const Vec& p) { return Box(p, p); }

Box Box::symmetric(const Vec& half_widths) { return Box(-half_widths, half_widths); }

Box Box::zero(int dim) { return Box(Vec::Zero(dim), Vec::Zero(dim)); }

bool Box::contains(const Vec& x, double eps) const
{
  checkDim(dim(), static_cast<int>(x.size()), "Box::contains");
  return ((x - lo).array() >= -eps).all() && ((hi - x).array() >= -eps).all();
}

double Box::support(const Eigen::Ref<const Vec>& dir) const
{
  double s = 0.0;
  for (int i = 0; i < dim(); ++i)
  {
    if (dir(i) != 0.0)
    {
      s += dir(i) > 0.0 ? dir(i) * hi(i) : dir(i) * lo(i);
    }
  }
  return s;
}

Vec Box::clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

bool Box::intersects(const Box& other) const
{
  return (lo.array() <= other.hi.array()).all() &&
         (other.lo.array() <= hi.array()).all();
}

bool Box::isBounded() const { return lo.allFinite() && hi.allFinite(); }

Box inflate(const Box& a, const Box& b)
{
  checkDim(a.dim(), b.dim(), "inflate");
  return Box(a.lo + b.lo, a.hi + b.hi);
}

Box erodeRaw(const Box& a, const Box& b)
{
  checkDim(a.dim(), b.dim(), "erode");
  return Box(a.lo - b.lo, a.hi - b.hi);
}

bool isEmpty(const Box& b) { return (b.lo.array() > b.hi.array()).any(); }

Polytope::Polytope(Mat A, Vec b) : A_(std::move(A)), b_(std::move(b))
{
  if (A_.rows() != b_.size())
  {
    throw GeometryError("Polytope: A has " + std::to_string(A_.rows()) +
                        " rows but b has " + std::to_string(b_.size()) +
                        " entries");
  }
  if (A_.rows() < 1 || A_.cols() < 1)
  {
    throw GeometryError("Polytope: at least one constraint is required");
  }
  if (!A_.allFinite() || b_.hasNaN())
  {
    throw GeometryError("Polytope: non-finite coefficients");
  }
  for (int i = 0; i < A_.rows(); ++i)
  {
    if (rowNorm(A_, i) == 0.0)
    {
      throw GeometryError("Polytope: row " + std::to_string(i) + " of A is zero");
    }
  }
  box_ = detectBox(A_, b_);
}

Polytope Polytope::fromBox(const Box& box)
{
  const int d = box.dim();
  Mat A = Mat::Zero(2 * d, d);
  Vec b(2 * d);
  for (int i = 0; i < d; ++i)
  {
    A(i, i) = 1.0;
    b(i) = box.hi(i);
    A(d + i, i) = -1.0;
    b(d + i) = -box.lo(i);
  }
  return Polytope(A, b);
}

Polytope Polytope::normalized() const
{
  Mat A = A_;
  Vec b = b_;
  for (int i = 0; i < A.rows(); ++i)
  {
    const double nrm = rowNorm(A_, i);
    A.row(i) /= nrm;
    b(i) /= nrm;
  }
  return Polytope(A, b);
}

Polytope Polytope::translated(const Vec& offset) const
{
  checkDim(dim(), static_cast<int>(offset.size()), "Polytope::translated");
  return Polytope(A_, b_ + A_ * offset);
}

bool contains(const Polytope& P, const Eigen::Ref<const Vec>& x, double eps)
{
  checkDim(P.dim(), static_cast<int>(x.size()), "contains");
  const Mat& A = P.A();
  const Vec& b = P.b();
  for (int i = 0; i < A.rows(); ++i)
  {
    if (A.row(i).dot(x) > b(i) + eps)
    {
      return false;
    }
  }
  return true;
}

Vec closestPoint(const Polytope& P, const Vec& x)
{
  checkDim(P.dim(), static_cast<int>(x.size()), "closestPoint");
  if (P.box())
  {
    return P.box()->clamp(x);
  }
  if (contains(P, x, 0.0))
  {
    return x;
  }
  const int d = P.dim();
  qp::Problem prob;
  prob.P = qp::toSparse(Mat::Identity(d, d));
  prob.q = -x;
  prob.A = qp::toSparse(P.A());
  prob.l = Vec::Constant(P.numConstraints(), -qp::kInfinity);
  prob.u = P.b();
  qp::Settings cfg;
  cfg.eps_abs = 1e-11;
  cfg.eps_rel = 1e-11;
  cfg.max_iter = 20000;
  const qp::Solution sol = qp::solve(prob, cfg);
  if (sol.status == qp::Status::Infeasible)
  {
    throw GeometryError("closestPoint: polytope is empty");
  }
  return sol.x;
}

Hyperplane adjacentHyperplane(const Polytope& P, const Vec& x, double eps)
{
  checkDim(P.dim(), static_cast<int>(x.size()), "adjacentHyperplane");
  const Mat& A = P.A();
  const Vec& b = P.b();
  const int nc = P.numConstraints();
  Vec sep(nc);
  for (int i = 0; i < nc; ++i)
  {
    sep(i) = (A.row(i).dot(x) - b(i)) / rowNorm(A, i);
  }
  if ((sep.array() < -eps).all())
  {
    throw GeometryError("adjacentHyperplane: query point is strictly inside the polytope");
  }
  const Vec c = closestPoint(P, x);
  const double active_tol = P.box() ? 1e-12 : 1e-7;
  int best = -1;
  for (int i = 0; i < nc; ++i)
  {
    const double slack = (A.row(i).dot(c) - b(i)) / rowNorm(A, i);
    if (std::abs(slack) > active_tol * std::max(1.0, std::abs(b(i))))
    {
      continue;
    }
    if (best < 0 || sep(i) > sep(best) + 1e-12)
    {
      best = i;
    }
  }
  if (best < 0)
  {
    sep.maxCoeff(&best);
  }
  const double nrm = rowNorm(A, best);
  return Hyperplane{A.row(best).transpose() / nrm, b(best) / nrm};
}

Polytope inflate(const Polytope& P, const Box& E)
{
  checkDim(P.dim(), E.dim(), "inflate");
  Vec b = P.b();
  for (int i = 0; i < P.numConstraints(); ++i)
  {
    b(i) += E.support(P.A().row(i).transpose());
  }
  return Polytope(P.A(), b);
}

Polytope erode(const Polytope& P, const Box& E)
{
  checkDim(P.dim(), E.dim(), "erode");
  Vec b = P.b();
  for (int i = 0; i < P.numConstraints(); ++i)
  {
    b(i) -= E.support(P.A().row(i).transpose());
  }
  return Polytope(P.A(), b);
}

std::vector<Vec> enumerateVertices(const Polytope& P, double eps)
{
  const int d = P.dim();
  if (d > 3)
  {
    throw GeometryError("enumerateVertices: dimension > 3 is not supported");
  }
  const int nc = P.numConstraints();
  std::vector<Vec> verts;
  std::vector<int> idx(d);
  // Iterate over all d-subsets of the constraint rows.
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == d)
    {
      Mat M(d, d);
      Vec r(d);
      for (int k = 0; k < d; ++k)
      {
        M.row(k) = P.A().row(idx[k]);
        r(k) = P.b()(idx[k]);
      }
      Eigen::FullPivLU<Mat> lu(M);
      if (!lu.isInvertible())
      {
        return;
      }
      const Vec v = lu.solve(r);
      if (!contains(P, v, eps * std::max(1.0, v.lpNorm<Eigen::Infinity>())))
      {
        return;
      }
      for (const auto& w : verts)
      {
        if ((w - v).norm() <= 1e-9 * std::max(1.0, v.norm()))
        {
          return;
        }
      }
      verts.push_back(v);
      return;
    }
    for (int i = start; i < nc; ++i)
    {
      idx[depth] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return verts;
}

Box boundingBox(const Polytope& P)
{
  if (P.box())
  {
    return *P.box();
  }
  const auto verts = enumerateVertices(P);
  if (verts.empty())
  {
    throw GeometryError("boundingBox: polytope has no vertices");
  }
  Vec lo = verts.front();
  Vec hi = verts.front();
  for (const auto& v : verts)
  {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return Box(lo, hi);
}

HullDistance hullPolytopeDistance(const Mat& points, const Polytope& P)
{
  checkDim(P.dim(), static_cast<int>(points.rows()), "hullPolytopeDistance");
  const int d = static_cast<int>(points.rows());
  const int k = static_cast<int>(points.cols());
  const int nv = k + d;
  // variables [lambda; z], cost 1/2 |M lambda - z|^2
  Mat H(nv, nv);
  H.topLeftCorner(k, k) = points.transpose() * points;
  H.topRightCorner(k, d) = -points.transpose();
  H.bottomLeftCorner(d, k) = -points;
  H.bottomRightCorner(d, d) = Mat::Identity(d, d);
  const int nc = P.numConstraints();
  Mat A = Mat::Zero(nc + k + 1, nv);
  Vec l(nc + k + 1), u(nc + k + 1);
  A.block(0, k, nc, d) = P.A();
  l.head(nc).setConstant(-qp::kInfinity);
  u.head(nc) = P.b();
  A.block(nc, 0, k, k) = Mat::Identity(k, k);
  l.segment(nc, k).setZero();
  u.segment(nc, k).setConstant(qp::kInfinity);
  A.block(nc + k, 0, 1, k).setOnes();
  l(nc + k) = 1.0;
  u(nc + k) = 1.0;
  qp::Problem prob{qp::toSparse(H), Vec::Zero(nv), qp::toSparse(A), l, u};
  qp::Settings cfg;
  cfg.eps_abs = 1e-10;
  cfg.eps_rel = 1e-10;
  cfg.max_iter = 20000;
  const qp::Solution sol = qp::solve(prob, cfg);
  if (sol.status == qp::Status::Infeasible)
  {
    throw GeometryError("hullPolytopeDistance: polytope is empty");
  }
  Vec lambda = sol.x.head(k).cwiseMax(0.0);
  lambda /= lambda.sum();
  HullDistance out;
  out.hull_point = points * lambda;
  out.polytope_point = sol.x.tail(d);
  out.distance = (out.hull_point - out.polytope_point).norm();
  return out;
}
}  // namespace bezgraph
