#include <bezgraph/bezier.hpp>

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace bezgraph;

namespace
{
BezierSpec spec(int m, int gamma, int degree, double T)
{
  BezierSpec s;
  s.m = m;
  s.gamma = gamma;
  s.degree = degree;
  s.duration = T;
  return s;
}
}  // namespace

TEST_CASE("Bernstein weights match the power-basis sum and partition unity")
{
  std::mt19937_64 rng(11);
  for (int p = 1; p <= 8; ++p)
  {
    const BezierSpec s = spec(2, 1, p, 1.7);
    const Mat P = oracle::randomPoints(rng, 2, p + 1, -3, 3);
    for (double t : {0.0, 0.3, 1.1, 1.7})
    {
      const Vec z = bernsteinEval(s, t);
      CHECK(z.sum() == doctest::Approx(1.0).epsilon(1e-14));
      CHECK((P * z - oracle::bezierPoint(P, 1.7, t)).norm() < 1e-12);
      CHECK((BezierCurve{s, P}.evaluate(t) - oracle::bezierPoint(P, 1.7, t)).norm() < 1e-12);
    }
  }
  CHECK_THROWS_AS(bernsteinEval(spec(2, 1, 3, 1.0), 1.5), BezierError);
}

TEST_CASE("derivative matrix reproduces the hodograph at the same degree")
{
  std::mt19937_64 rng(12);
  for (int p = 1; p <= 7; ++p)
  {
    const double T = 0.8;
    const BezierSpec s = spec(3, 1, p, T);
    const Mat P = oracle::randomPoints(rng, 3, p + 1, -2, 2);
    const Mat H = derivativeMatrix(s);
    const Mat hod = oracle::derivativePoints(P, T, 1);
    for (double t : {0.0, 0.25, 0.5, 0.8})
    {
      const Vec a = BezierCurve{s, P * H}.evaluate(t);
      const Vec b = oracle::bezierPoint(hod, T, t);
      CHECK((a - b).norm() < 1e-10);
    }
  }
}

TEST_CASE("boundary curve interpolates full states at both ends")
{
  std::mt19937_64 rng(13);
  for (int gamma = 1; gamma <= 4; ++gamma)
  {
    const BezierSpec s = BezierSpec::boundaryValue(2, gamma, 1.3);
    CHECK(s.degree == 2 * gamma - 1);
    const Vec x0 = oracle::randomPoints(rng, 2 * gamma, 1, -1, 1);
    const Vec xT = oracle::randomPoints(rng, 2 * gamma, 1, -1, 1);
    const BezierCurve c = boundaryCurve(s, x0, xT);
    const StateSpaceCurve L = lift(c);
    CHECK((L.evaluate(0.0) - x0).norm() < 1e-9);
    CHECK((L.evaluate(1.3) - xT).norm() < 1e-9);
    // Lifted block k is the k-th derivative.
    for (int k = 0; k < gamma; ++k)
    {
      const Mat dk = oracle::derivativePoints(c.points, 1.3, k);
      CHECK((L.evaluate(0.6).segment(k * 2, 2) - oracle::bezierPoint(dk, 1.3, 0.6)).norm() < 1e-9);
    }
    // Input is the gamma-th derivative.
    const Mat dg = oracle::derivativePoints(c.points, 1.3, gamma);
    CHECK((L.input(0.4) - oracle::bezierPoint(dg, 1.3, 0.4)).norm() < 1e-8);
  }
}

TEST_CASE("lifted boundary map equals lift of the boundary curve")
{
  std::mt19937_64 rng(14);
  const BezierSpec s = BezierSpec::boundaryValue(2, 2, 0.5);
  const Mat L = liftedBoundaryMap(s);
  CHECK(L.rows() == 4 * 4);
  CHECK(L.cols() == 8);
  const Vec x0 = oracle::randomPoints(rng, 4, 1, -1, 1);
  const Vec xT = oracle::randomPoints(rng, 4, 1, -1, 1);
  Vec xx(8);
  xx << x0, xT;
  const Mat lifted = lift(boundaryCurve(s, x0, xT)).lifted;
  const Vec direct = L * xx;
  CHECK((direct - Eigen::Map<const Vec>(lifted.data(), lifted.size())).norm() < 1e-10);
}

TEST_CASE("endpoint interpolation")
{
  std::mt19937_64 rng(15);
  for (int k = 0; k < 50; ++k)
  {
    const int p = 1 + k % 7;
    const Mat P = oracle::randomPoints(rng, 2, p + 1, -5, 5);
    const BezierCurve c{spec(2, 1, p, 2.0), P};
    CHECK((c.evaluate(0.0) - P.col(0)).norm() <= 1e-9);
    CHECK((c.evaluate(2.0) - P.col(p)).norm() <= 1e-9);
  }
}

TEST_CASE("subdivision pieces re-evaluate the parent curve")
{
  std::mt19937_64 rng(16);
  const Mat P = oracle::randomPoints(rng, 2, 6, -1, 1);
  const BezierCurve c{spec(2, 1, 5, 1.0), P};
  const std::vector<double> cuts{0.2, 0.55, 0.9};
  const auto pieces = subdivide(c, cuts);
  REQUIRE(pieces.size() == 4);
  std::vector<double> starts{0.0, 0.2, 0.55, 0.9};
  for (std::size_t i = 0; i < pieces.size(); ++i)
  {
    const double T = pieces[i].spec.duration;
    for (double f : {0.0, 0.3, 1.0})
    {
      CHECK((pieces[i].evaluate(f * T) - c.evaluate(starts[i] + f * T)).norm() <= 1e-9);
    }
  }
  CHECK_THROWS_AS(subdivide(c, std::vector<double>{0.5, 0.4}), BezierError);
}

TEST_CASE("control polygon length bounds the arc length")
{
  std::mt19937_64 rng(17);
  for (int k = 0; k < 30; ++k)
  {
    const Mat P = oracle::randomPoints(rng, 2, 4, -1, 1);
    CHECK(pathLengthBound(P) >= oracle::arcLength(P, 1.0) - 1e-12);
  }
  Mat line(2, 3);
  line << 0, 1, 2, 0, 0, 0;
  CHECK(pathLengthBound(line) == doctest::Approx(oracle::arcLength(line, 1.0)));
}

TEST_CASE("trajectory stitches segments")
{
  const BezierSpec s = BezierSpec::boundaryValue(1, 2, 1.0);
  Vec a(2), b(2), c(2);
  a << 0, 0;
  b << 1, 0;
  c << 3, 0;
  Trajectory tr;
  tr.segments.push_back(lift(boundaryCurve(s, a, b)));
  tr.segments.push_back(lift(boundaryCurve(s, b, c)));
  CHECK(tr.duration() == doctest::Approx(2.0));
  CHECK(tr.state(1.0)(0) == doctest::Approx(1.0));
  CHECK((tr.finalState() - c).norm() < 1e-9);
}
