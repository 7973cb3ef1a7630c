#include <bezgraph/generators.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace bezgraph
{
namespace
{
Vec vec2(double x, double y)
{
  Vec v(2);
  v << x, y;
  return v;
}

Vec restState(double x, double y)
{
  Vec s = Vec::Zero(4);
  s << x, y, 0.0, 0.0;
  return s;
}

Box box2(double x0, double y0, double x1, double y1) { return Box(vec2(x0, y0), vec2(x1, y1)); }

MovingObstacle still(const Box& b) { return MovingObstacle{Polytope::fromBox(b), {}, {}}; }

/// Distance from p to the box.
double boxDistance(const Box& b, const Vec& p)
{
  return (p - b.clamp(p)).norm();
}

Scenario planarScene(double width, double height, double vmax, double umax)
{
  Scenario s;
  s.spec = BezierSpec::boundaryValue(2, 2, 1.0);
  Vec lo(4);
  Vec hi(4);
  lo << 0.0, 0.0, -vmax, -vmax;
  hi << width, height, vmax, vmax;
  s.Xd = Polytope::fromBox(Box(lo, hi));
  s.U = Box(Vec::Constant(2, -umax), Vec::Constant(2, umax));
  s.scene_bounds = box2(0.0, 0.0, width, height);
  s.graph.N = 1000;
  s.graph.T = 1.0;
  s.graph.stationary_fraction = 0.2;
  s.mpc.horizon = 10;
  s.mpc.h = 0.1;
  s.mpc.weights = MpcWeights::defaults(2, 2);
  s.rates = Rates{2.0, 10.0, 100.0};
  s.sim.timeout = 60.0;
  return s;
}
}  // namespace

Scenario deskScenario()
{
  Scenario s = planarScene(10.0, 10.0, 2.0, 4.0);
  s.name = "desk";
  s.start = restState(1.0, 1.0);
  s.goal = restState(9.0, 9.0);
  return s;
}

Scenario demoScenario()
{
  Scenario s = deskScenario();
  s.name = "demo";
  for (const Box& b : {box2(2.5, 2.0, 3.5, 4.5), box2(4.5, 4.5, 5.5, 5.5), box2(6.0, 6.5, 8.5, 7.5),
                       box2(2.0, 6.5, 3.0, 8.5), box2(6.5, 1.5, 7.5, 3.5), box2(4.0, 8.0, 5.0, 9.0)})
  {
    s.obstacles.push_back(still(b));
  }
  s.sim.timeout = 3600.0;
  s.sim.stop_at_goal = false;
  return s;
}

Scenario randomFieldScenario(std::uint64_t seed, int obstacles, int vertices)
{
  Scenario s = deskScenario();
  s.name = "random-field-" + std::to_string(seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> corner(0.5, 1.5);
  s.start = restState(corner(rng), corner(rng));
  s.goal = restState(10.0 - corner(rng), 10.0 - corner(rng));
  std::uniform_real_distribution<double> side(0.4, 1.2);
  std::uniform_real_distribution<double> where(0.3, 9.7);
  const Vec start = s.start.head(2);
  const Vec goal = s.goal.head(2);
  int placed = 0;
  int attempts = 0;
  while (placed < obstacles && attempts < 100 * std::max(1, obstacles))
  {
    ++attempts;
    const double w = side(rng);
    const double h = side(rng);
    const double cx = where(rng);
    const double cy = where(rng);
    Box b(vec2(std::max(0.0, cx - 0.5 * w), std::max(0.0, cy - 0.5 * h)),
          vec2(std::min(10.0, cx + 0.5 * w), std::min(10.0, cy + 0.5 * h)));
    if (boxDistance(b, start) < 0.8 || boxDistance(b, goal) < 0.8)
    {
      continue;
    }
    s.obstacles.push_back(still(b));
    ++placed;
  }
  s.graph.N = vertices;
  s.graph.seed = seed;
  s.sim.disturbance_seed = seed * 7919 + 1;
  return s;
}

Scenario cornerScenario(std::uint64_t seed, int vertices)
{
  Scenario s = deskScenario();
  s.name = "corner-" + std::to_string(seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  std::uniform_real_distribution<double> size(1.5, 3.0);
  s.start = restState(1.0 + jitter(rng), 5.0 + 3.0 * jitter(rng));
  s.goal = restState(9.0 + jitter(rng), 5.0 + 3.0 * jitter(rng));
  const double cx = 5.0 + jitter(rng);
  const double cy = 0.5 * (s.start(1) + s.goal(1));
  const double hw = 0.5 * size(rng) / 2.0;
  const double hh = 0.5 * size(rng) * 1.5;
  s.obstacles.push_back(still(box2(cx - hw, std::max(0.0, cy - hh), cx + hw, std::min(10.0, cy + hh))));
  s.graph.N = vertices;
  s.graph.seed = seed;
  s.sim.disturbance_seed = seed + 101;
  s.mpc.horizon = 50;
  // path length dominates tracking
  s.mpc.weights.Q = 0.01 * Mat::Identity(4, 4);
  s.mpc.weights.Fw = Mat::Zero(4, 4);
  s.mpc.weights.Fw.topLeftCorner(2, 2) = 100.0 * Mat::Identity(2, 2);
  return s;
}

Scenario mazeScenario(std::uint64_t seed)
{
  constexpr int kCols = 30;
  constexpr int kRows = 20;
  constexpr double kCell = 0.5;
  constexpr double kHalfThick = 0.03;
  constexpr int kWalls = 300;
  Scenario s = planarScene(kCols * kCell, kRows * kCell, 1.0, 4.0);
  s.name = "maze-" + std::to_string(seed);
  std::mt19937_64 rng(seed);

  // Walls between horizontally adjacent cells: vertical[r][c] separates
  // (c, r) and (c+1, r). horizontal[r][c] separates (c, r) and (c, r+1).
  std::vector<std::uint8_t> vertical(kRows * (kCols - 1), 1);
  std::vector<std::uint8_t> horizontal((kRows - 1) * kCols, 1);
  std::vector<std::uint8_t> visited(kRows * kCols, 0);
  std::vector<int> stack{0};
  visited[0] = 1;
  while (!stack.empty())
  {
    const int cell = stack.back();
    const int c = cell % kCols;
    const int r = cell / kCols;
    std::array<int, 4> options{};
    int count = 0;
    if (c > 0 && !visited[cell - 1]) options[count++] = 0;
    if (c + 1 < kCols && !visited[cell + 1]) options[count++] = 1;
    if (r > 0 && !visited[cell - kCols]) options[count++] = 2;
    if (r + 1 < kRows && !visited[cell + kCols]) options[count++] = 3;
    if (count == 0)
    {
      stack.pop_back();
      continue;
    }
    const int pick = options[std::uniform_int_distribution<int>(0, count - 1)(rng)];
    int next = cell;
    switch (pick)
    {
      case 0: vertical[r * (kCols - 1) + c - 1] = 0; next = cell - 1; break;
      case 1: vertical[r * (kCols - 1) + c] = 0; next = cell + 1; break;
      case 2: horizontal[(r - 1) * kCols + c] = 0; next = cell - kCols; break;
      default: horizontal[r * kCols + c] = 0; next = cell + kCols; break;
    }
    visited[next] = 1;
    stack.push_back(next);
  }

  std::vector<Box> walls;
  for (int r = 0; r < kRows; ++r)
  {
    for (int c = 0; c + 1 < kCols; ++c)
    {
      if (vertical[r * (kCols - 1) + c])
      {
        const double x = (c + 1) * kCell;
        walls.push_back(box2(x - kHalfThick, r * kCell, x + kHalfThick, (r + 1) * kCell));
      }
    }
  }
  for (int r = 0; r + 1 < kRows; ++r)
  {
    for (int c = 0; c < kCols; ++c)
    {
      if (horizontal[r * kCols + c])
      {
        const double y = (r + 1) * kCell;
        walls.push_back(box2(c * kCell, y - kHalfThick, (c + 1) * kCell, y + kHalfThick));
      }
    }
  }
  std::shuffle(walls.begin(), walls.end(), rng);
  if (walls.size() > static_cast<std::size_t>(kWalls))
  {
    walls.resize(kWalls);
  }
  for (const Box& b : walls)
  {
    s.obstacles.push_back(still(b));
  }

  // Lattice: every cell centre at rest plus six headings at 0.5 m/s.
  const double speed = 0.5;
  const int headings = 6;
  Mat V(4, kRows * kCols * (headings + 1));
  int k = 0;
  for (int r = 0; r < kRows; ++r)
  {
    for (int c = 0; c < kCols; ++c)
    {
      const double x = (c + 0.5) * kCell;
      const double y = (r + 0.5) * kCell;
      V.col(k++) << x, y, 0.0, 0.0;
      for (int j = 0; j < headings; ++j)
      {
        const double a = 2.0 * std::numbers::pi * j / headings;
        V.col(k++) << x, y, speed * std::cos(a), speed * std::sin(a);
      }
    }
  }
  s.graph.vertices = V;
  s.graph.N = static_cast<int>(V.cols());
  s.graph.T = 1.0;
  s.graph.seed = seed;
  s.start = restState(0.5 * kCell, 0.5 * kCell);
  s.goal = restState((kCols - 0.5) * kCell, (kRows - 0.5) * kCell);
  s.sim.timeout = 240.0;
  s.sim.w_max = 0.02;
  return s;
}

Scenario movingObstacleScenario(std::uint64_t seed)
{
  Scenario s = deskScenario();
  s.name = "moving-" + std::to_string(seed);
  s.graph.seed = seed;
  s.sim.disturbance_seed = seed + 11;
  MovingObstacle sweep{Polytope::fromBox(box2(0.5, 4.0, 2.0, 5.0)), {0.0, 6.0, 12.0},
                       {vec2(0.0, 0.0), vec2(7.0, 1.0), vec2(3.0, 1.0)}};
  s.obstacles.push_back(sweep);
  s.obstacles.push_back(still(box2(6.5, 2.0, 7.5, 4.0)));
  return s;
}
Scenario presetScenario(const std::string& name, std::uint64_t seed)
{
  if (name == "demo")
  {
    return demoScenario();
  }
  if (name == "desk")
  {
    return deskScenario();
  }
  if (name == "field")
  {
    return randomFieldScenario(seed);
  }
  if (name == "corner")
  {
    return cornerScenario(seed);
  }
  if (name == "maze")
  {
    return mazeScenario(seed);
  }
  if (name == "moving")
  {
    return movingObstacleScenario(seed);
  }
  throw ScenarioError("preset: unknown preset \"" + name + "\"");
}
}  // namespace bezgraph
