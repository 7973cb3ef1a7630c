#include <bezgraph/qp.hpp>

#include "oracles.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <random>

using namespace bezgraph;

namespace
{
qp::Problem dense(const Mat& P, const Vec& q, const Mat& A, const Vec& l, const Vec& u)
{
  qp::Problem p;
  p.P = qp::toSparse(P);
  p.q = q;
  p.A = qp::toSparse(A);
  p.l = l;
  p.u = u;
  return p;
}

// Strictly convex QP with one-sided rows A x <= u, solved by enumerating
// active sets and keeping the KKT point with non-negative multipliers.
Vec enumerateActiveSets(const Mat& P, const Vec& q, const Mat& A, const Vec& u)
{
  const int n = static_cast<int>(q.size());
  const int m = static_cast<int>(u.size());
  Vec best;
  double best_obj = INFINITY;
  for (int mask = 0; mask < (1 << m); ++mask)
  {
    std::vector<int> rows;
    for (int i = 0; i < m; ++i)
    {
      if (mask & (1 << i))
      {
        rows.push_back(i);
      }
    }
    const int k = static_cast<int>(rows.size());
    Mat K = Mat::Zero(n + k, n + k);
    Vec rhs(n + k);
    K.topLeftCorner(n, n) = P;
    rhs.head(n) = -q;
    for (int r = 0; r < k; ++r)
    {
      K.block(0, n + r, n, 1) = A.row(rows[r]).transpose();
      K.block(n + r, 0, 1, n) = A.row(rows[r]);
      rhs(n + r) = u(rows[r]);
    }
    Eigen::FullPivLU<Mat> lu(K);
    if (lu.rank() < n + k)
    {
      continue;
    }
    const Vec sol = lu.solve(rhs);
    const Vec x = sol.head(n);
    if (k > 0 && sol.tail(k).minCoeff() < -1e-12)
    {
      continue;
    }
    if ((A * x - u).maxCoeff() > 1e-10)
    {
      continue;
    }
    const double obj = 0.5 * x.dot(P * x) + q.dot(x);
    if (obj < best_obj)
    {
      best_obj = obj;
      best = x;
    }
  }
  return best;
}
}  // namespace

TEST_CASE("unconstrained quadratic reaches the stationary point")
{
  Mat P(2, 2);
  P << 4, 1, 1, 2;
  Vec q(2);
  q << 1, 1;
  const qp::Problem prob = dense(P, q, Mat::Zero(0, 2), Vec(0), Vec(0));
  const qp::Solution s = qp::solve(prob);
  CHECK(s.status == qp::Status::Solved);
  const Vec expected = P.ldlt().solve(-q);
  CHECK((s.x - expected).norm() < 1e-6);
}

TEST_CASE("box constrained projection")
{
  const Mat P = Mat::Identity(3, 3);
  Vec q(3);
  q << -5, 0.2, 3;
  const qp::Problem prob = dense(P, q, Mat::Identity(3, 3), -Vec::Ones(3), Vec::Ones(3));
  const qp::Solution s = qp::solve(prob);
  REQUIRE(s.status == qp::Status::Solved);
  CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(s.x(1) == doctest::Approx(-0.2).epsilon(1e-8));
  CHECK(s.x(2) == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(s.polished);
  // Multipliers: +ve on active upper bounds, -ve on active lower bounds.
  CHECK(s.y(0) > 0.0);
  CHECK(s.y(2) < 0.0);
  CHECK(std::abs(s.y(1)) < 1e-8);
}

TEST_CASE("random strictly convex QPs agree with active-set enumeration")
{
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial)
  {
    const int n = 2 + trial % 3;
    const int m = 3 + trial % 4;
    const Mat M = oracle::randomPoints(rng, n, n, -1, 1);
    const Mat P = M * M.transpose() + 0.5 * Mat::Identity(n, n);
    const Vec q = oracle::randomPoints(rng, n, 1, -3, 3);
    const Mat A = oracle::randomPoints(rng, m, n, -1, 1);
    // The origin is strictly feasible.
    const Vec u = oracle::randomPoints(rng, m, 1, 0.1, 1.0);
    const Vec l = Vec::Constant(m, -qp::kInfinity);
    const Vec expected = enumerateActiveSets(P, q, A, u);
    REQUIRE(expected.size() == n);
    const qp::Solution s = qp::solve(dense(P, q, A, l, u));
    CAPTURE(trial);
    CHECK(s.status == qp::Status::Solved);
    CHECK((s.x - expected).norm() < 1e-7);
  }
}

TEST_CASE("equality rows are honoured")
{
  const Mat P = Mat::Identity(2, 2);
  const Vec q = Vec::Zero(2);
  Mat A(1, 2);
  A << 1, 1;
  Vec b(1);
  b << 2;
  const qp::Solution s = qp::solve(dense(P, q, A, b, b));
  REQUIRE(s.status == qp::Status::Solved);
  CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(s.x(1) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("infeasible problems are detected")
{
  const Mat P = Mat::Identity(1, 1);
  Mat A(2, 1);
  A << 1, 1;
  Vec l(2), u(2);
  l << -qp::kInfinity, 2;
  u << 1, qp::kInfinity;
  const qp::Solution s = qp::solve(dense(P, Vec::Zero(1), A, l, u));
  CHECK(s.status == qp::Status::Infeasible);
}

TEST_CASE("malformed input throws, batch reports Invalid")
{
  qp::Problem bad = dense(Mat::Identity(2, 2), Vec::Zero(2), Mat::Identity(2, 2), Vec::Ones(2),
                          Vec::Zero(2));
  CHECK_THROWS_AS(bad.validate(), qp::QpError);
  CHECK_THROWS_AS(qp::solve(bad), qp::QpError);

  Mat asym(2, 2);
  asym << 1, 1, 0, 1;
  CHECK_THROWS_AS(qp::solve(dense(asym, Vec::Zero(2), Mat::Zero(0, 2), Vec(0), Vec(0))),
                  qp::QpError);

  const qp::Problem good = dense(Mat::Identity(1, 1), Vec::Ones(1), Mat::Identity(1, 1),
                                 -Vec::Ones(1), Vec::Ones(1));
  std::vector<qp::Problem> batch{good, bad, good};
  const auto out = qp::solveBatch(batch);
  REQUIRE(out.size() == 3);
  CHECK(out[0].status == qp::Status::Solved);
  CHECK(out[1].status == qp::Status::Invalid);
  CHECK(out[2].status == qp::Status::Solved);
  CHECK(out[0].x(0) == doctest::Approx(-1.0).epsilon(1e-8));
}

TEST_CASE("solve is deterministic and accepts a warm start")
{
  std::mt19937_64 rng(22);
  const Mat M = oracle::randomPoints(rng, 4, 4, -1, 1);
  const Mat P = M * M.transpose() + Mat::Identity(4, 4);
  const Vec q = oracle::randomPoints(rng, 4, 1, -1, 1);
  const Mat A = oracle::randomPoints(rng, 6, 4, -1, 1);
  const Vec u = Vec::Constant(6, 0.3);
  const Vec l = Vec::Constant(6, -0.3);
  const qp::Problem prob = dense(P, q, A, l, u);
  const qp::Solution a = qp::solve(prob);
  const qp::Solution b = qp::solve(prob);
  CHECK(a.x == b.x);
  CHECK(a.iterations == b.iterations);
  const qp::Solution w = qp::solve(prob, {}, qp::WarmStart{a.x, a.y});
  CHECK(w.status == qp::Status::Solved);
  CHECK(w.iterations <= a.iterations);
  CHECK((w.x - a.x).norm() < 1e-7);
}
