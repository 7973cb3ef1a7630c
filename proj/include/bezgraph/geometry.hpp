#pragma once

#include <bezgraph/types.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bezgraph
{
class GeometryError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Default membership tolerance for metre-scale double precision geometry.
inline constexpr double kGeometryEps = 1e-9;

/// Axis-aligned box [lo, hi].
struct Box
{
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lower, Vec upper);

  static Box point(const Vec& p);
  static Box symmetric(const Vec& half_widths);
  static Box zero(int dim);

  int dim() const { return static_cast<int>(lo.size()); }
  Vec center() const { return 0.5 * (lo + hi); }
  Vec extent() const { return hi - lo; }
  bool contains(const Vec& x, double eps = kGeometryEps) const;
  /// max over e in the box of dir . e
  double support(const Eigen::Ref<const Vec>& dir) const;
  Vec clamp(const Vec& x) const;
  bool intersects(const Box& other) const;
  bool isBounded() const;
  Box head(int n) const { return Box(lo.head(n), hi.head(n)); }
};

/// Minkowski sum of two boxes.
Box inflate(const Box& a, const Box& b);
/// Pontryagin difference a - b = {x : x + e in a for all e in b}. May be
/// inverted (lo > hi) when empty; check with isEmpty().
Box erodeRaw(const Box& a, const Box& b);
bool isEmpty(const Box& b);

/// Oriented hyperplane {y : normal . y = offset}; the positive side is
/// normal . y > offset.
struct Hyperplane
{
  Vec normal;
  double offset = 0.0;

  double signedDistance(const Eigen::Ref<const Vec>& x) const
  {
    return normal.dot(x) - offset;
  }
};

/// Convex H-polytope {x : A x <= b}.
class Polytope
{
public:
  Polytope() = default;
  Polytope(Mat A, Vec b);

  /// Rows ordered as the upper faces +e_i x <= hi_i, then the lower faces
  /// -e_i x <= -lo_i.
  static Polytope fromBox(const Box& box);

  const Mat& A() const { return A_; }
  const Vec& b() const { return b_; }
  int dim() const { return static_cast<int>(A_.cols()); }
  int numConstraints() const { return static_cast<int>(A_.rows()); }

  /// Set when every row is an axis-aligned face and the polytope is exactly
  /// the box; enables closed-form projection.
  const std::optional<Box>& box() const { return box_; }

  /// Same set, rows scaled to unit norm.
  Polytope normalized() const;
  Polytope translated(const Vec& offset) const;

private:
  Mat A_;
  Vec b_;
  std::optional<Box> box_;
};

bool contains(const Polytope& P, const Eigen::Ref<const Vec>& x,
              double eps = kGeometryEps);

/// Euclidean projection onto P. Throws GeometryError when P is empty.
Vec closestPoint(const Polytope& P, const Vec& x);

/// Face of P active at closestPoint(P, x), oriented so that x lies on the
/// positive side. Among several active faces the one with the largest
/// separation normal . x - offset wins; ties go to the lowest row index.
/// Throws GeometryError when x is strictly inside P.
Hyperplane adjacentHyperplane(const Polytope& P, const Vec& x,
                              double eps = kGeometryEps);

/// Outer approximation of P (+) E; exact when P is a box.
Polytope inflate(const Polytope& P, const Box& E);
/// P (-) E = {x : x + e in P for all e in E}.
Polytope erode(const Polytope& P, const Box& E);

/// Vertices of a bounded polytope in dimension <= 3 by enumerating
/// constraint subsets.
std::vector<Vec> enumerateVertices(const Polytope& P, double eps = 1e-9);
/// Tight axis-aligned bounds of a bounded polytope (dimension <= 3 or a box).
Box boundingBox(const Polytope& P);

/// Euclidean distance between conv(points) and P together with the
/// minimizing pair; distance is 0 when they intersect.
struct HullDistance
{
  double distance = 0.0;
  Vec hull_point;
  Vec polytope_point;
};
HullDistance hullPolytopeDistance(const Mat& points, const Polytope& P);

void checkDim(int expected, int actual, const char* what);
}  // namespace bezgraph
