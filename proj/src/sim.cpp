#include <bezgraph/sim.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bezgraph
{
namespace
{
constexpr double kStateMatchTol = 1e-12;

int integerRatio(double a, double b, const char* what)
{
  const double r = a / b;
  const long k = std::lround(r);
  if (k < 1 || std::abs(r - static_cast<double>(k)) > 1e-9 * std::max(1.0, r))
  {
    throw ScenarioError(std::string(what) + " must be an integer multiple");
  }
  return static_cast<int>(k);
}

double factorial(int k)
{
  double f = 1.0;
  for (int i = 2; i <= k; ++i)
  {
    f *= i;
  }
  return f;
}

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

bool hullSafe(const Mat& pts, const std::vector<Polytope>& obstacles,
              const std::vector<Box>& bounds, const CutSettings& cs)
{
  const Box bb(pts.rowwise().minCoeff(), pts.rowwise().maxCoeff());
  for (std::size_t o = 0; o < obstacles.size(); ++o)
  {
    if (!bb.intersects(bounds[o]))
    {
      continue;
    }
    const CutVerdict v = cutHeuristic(pts, obstacles[o], cs.eps_cut);
    if (v == CutVerdict::Unsafe)
    {
      return false;
    }
    if (v == CutVerdict::Indeterminate && cutQp(pts, obstacles[o], cs).verdict != CutVerdict::Safe)
    {
      return false;
    }
  }
  return true;
}

struct PathPlan
{
  std::vector<int> vertices;
  std::vector<Vec> states;
  double cost = 0.0;
  bool virtual_start = false;
};

/// Path from an arbitrary state: exact vertex match, otherwise virtual edges
/// to every vertex the oracle and the obstacles admit.
std::optional<PathPlan> planFrom(const BezierGraph& g, const CutMask& mask,
                                 const ReachOracle& oracle, const Mat& lift_map,
                                 const std::vector<Polytope>& obstacles,
                                 const std::vector<Box>& bounds, const CutSettings& cs,
                                 const Vec& x, int goal_vertex)
{
  const int N = g.numVertices();
  const int m = g.spec.m;
  std::vector<std::pair<int, double>> sources;
  bool virtual_start = true;
  for (int i = 0; i < N; ++i)
  {
    if ((g.vertices.col(i) - x).lpNorm<Eigen::Infinity>() <= kStateMatchTol)
    {
      sources.emplace_back(i, 0.0);
      virtual_start = false;
      break;
    }
  }
  if (virtual_start)
  {
    std::vector<double> cost(N, -1.0);
    parallelFor(static_cast<std::size_t>(N), [&](std::size_t j) {
      const Vec v = g.vertices.col(static_cast<Eigen::Index>(j));
      if (!checkEdge(oracle, x, v))
      {
        return;
      }
      const Mat pts = piecePositions(lift_map, m, x, v);
      if (hullSafe(pts, obstacles, bounds, cs))
      {
        cost[j] = pathLengthBound(pts);
      }
    });
    for (int j = 0; j < N; ++j)
    {
      if (cost[j] >= 0.0)
      {
        sources.emplace_back(j, cost[j]);
      }
    }
  }
  if (sources.empty())
  {
    return std::nullopt;
  }
  const auto path = shortestPath(g, mask, sources, goal_vertex);
  if (!path)
  {
    return std::nullopt;
  }
  PathPlan plan;
  plan.vertices = path->vertices;
  plan.cost = path->cost;
  plan.virtual_start = virtual_start;
  if (virtual_start)
  {
    plan.states.push_back(x);
  }
  for (int v : path->vertices)
  {
    plan.states.push_back(g.vertices.col(v));
  }
  return plan;
}

int nearestStationaryVertex(const BezierGraph& g, const Vec& goal)
{
  const int m = g.spec.m;
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.numVertices(); ++i)
  {
    const Vec v = g.vertices.col(i);
    if ((v - goal).lpNorm<Eigen::Infinity>() <= kStateMatchTol)
    {
      return i;
    }
    if (!isStationary(v, m))
    {
      continue;
    }
    const double d = (v.head(m) - goal.head(m)).norm();
    if (d < best_d)
    {
      best_d = d;
      best = i;
    }
  }
  if (best < 0)
  {
    throw ScenarioError("graph: no stationary vertex to use as goal");
  }
  return best;
}

void checkInside(const Box& scene, const Polytope& shape, const std::string& what)
{
  const Box bb = boundingBox(shape);
  if (!scene.contains(bb.lo, 1e-9) || !scene.contains(bb.hi, 1e-9))
  {
    throw ScenarioError(what + ": lies outside the scene bounds");
  }
}

Vec goalState(const Vec& goal, int m, int n)
{
  if (goal.size() == n)
  {
    return goal;
  }
  if (goal.size() == m)
  {
    Vec g = Vec::Zero(n);
    g.head(m) = goal;
    return g;
  }
  throw ScenarioError("goal: must have the output or the state dimension");
}
}  // namespace

Mat integratorGains(int m, std::span<const double> gains)
{
  const int g = static_cast<int>(gains.size());
  if (g < 1 || m < 1)
  {
    throw ScenarioError("integratorGains: need at least one gain");
  }
  Mat K = Mat::Zero(m, m * g);
  for (int k = 0; k < g; ++k)
  {
    K.middleCols(k * m, m) = gains[k] * Mat::Identity(m, m);
  }
  return K;
}

Vec trackingController(const Vec& x, const Vec& x_desired, const Vec& u_ff, const Mat& K)
{
  return u_ff + K * (x_desired - x);
}

Vec step(int m, int gamma, const Vec& x, const Vec& u, const Vec& w, double dt)
{
  if (!(dt > 0.0))
  {
    throw ScenarioError("step: dt must be positive");
  }
  checkDim(m * gamma, static_cast<int>(x.size()), "step: state");
  checkDim(m, static_cast<int>(u.size()), "step: input");
  checkDim(m, static_cast<int>(w.size()), "step: disturbance");
  const Vec v = u + w;
  Vec out = Vec::Zero(x.size());
  for (int i = 0; i < gamma; ++i)
  {
    for (int j = i; j < gamma; ++j)
    {
      out.segment(i * m, m) += std::pow(dt, j - i) / factorial(j - i) * x.segment(j * m, m);
    }
    out.segment(i * m, m) += std::pow(dt, gamma - i) / factorial(gamma - i) * v;
  }
  return out;
}

TrackingTube computeTube(int m, int gamma, const Mat& K, double w_max, double dt,
                         double safety, const Vec& residual)
{
  const int n = m * gamma;
  if (K.rows() != m || K.cols() != n)
  {
    throw ScenarioError("computeTube: K must be m x n");
  }
  if (!(w_max >= 0.0) || !(dt > 0.0) || !(safety >= 1.0))
  {
    throw ScenarioError("computeTube: invalid disturbance bound, step or safety factor");
  }
  const Vec r = residual.size() == 0 ? Vec::Zero(n) : residual;
  checkDim(n, static_cast<int>(r.size()), "computeTube: residual");
  const Discretization d = discretize(BezierSpec{m, gamma, 2 * gamma - 1, 1.0}, dt);
  const Mat Phi = d.A - d.B * K;
  Mat Pj = Mat::Identity(n, n);
  Vec bound = Vec::Zero(n);
  const Vec ones = Vec::Ones(m);
  constexpr int kMaxTerms = 200000;
  int j = 0;
  for (; j < kMaxTerms; ++j)
  {
    bound += (Pj * d.B).cwiseAbs() * ones * w_max + Pj.cwiseAbs() * r;
    Pj = Phi * Pj;
    if (Pj.lpNorm<Eigen::Infinity>() < 1e-16)
    {
      break;
    }
  }
  if (j == kMaxTerms)
  {
    throw ScenarioError("computeTube: sampled closed loop is not contracting");
  }
  const Vec e = safety * bound;
  TrackingTube t;
  t.state_error = Box::symmetric(e);
  t.input_margin = Box::symmetric(K.cwiseAbs() * e);
  return t;
}

Vec feedforwardResidual(const Box& U, double h, double dt)
{
  const int m = U.dim();
  Vec r = Vec::Zero(2 * m);
  r.head(m) = (U.hi - U.lo) / h * (dt * dt * dt / 12.0);
  return r;
}

Polytope MovingObstacle::at(double t) const
{
  if (times.empty())
  {
    return shape;
  }
  if (t <= times.front())
  {
    return shape.translated(offsets.front());
  }
  if (t >= times.back())
  {
    return shape.translated(offsets.back());
  }
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times.begin());
  const double s = (t - times[i - 1]) / (times[i] - times[i - 1]);
  return shape.translated((1.0 - s) * offsets[i - 1] + s * offsets[i]);
}

Polytope MovingObstacle::sweep(double t0, double t1) const
{
  if (!moving())
  {
    return at(t0);
  }
  const auto offsetAt = [&](double t) -> Vec {
    if (t <= times.front())
    {
      return offsets.front();
    }
    if (t >= times.back())
    {
      return offsets.back();
    }
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times.begin());
    const double s = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return (1.0 - s) * offsets[i - 1] + s * offsets[i];
  };
  Vec lo = offsetAt(t0);
  Vec hi = lo;
  const Vec end = offsetAt(t1);
  lo = lo.cwiseMin(end);
  hi = hi.cwiseMax(end);
  for (std::size_t i = 0; i < times.size(); ++i)
  {
    if (times[i] > t0 && times[i] < t1)
    {
      lo = lo.cwiseMin(offsets[i]);
      hi = hi.cwiseMax(offsets[i]);
    }
  }
  return inflate(shape, Box(lo, hi));
}

void Scenario::validate() const
{
  if (version != 1)
  {
    throw ScenarioError("version: unsupported scenario version " + std::to_string(version));
  }
  try
  {
    spec.validate();
  }
  catch (const std::exception& e)
  {
    throw ScenarioError(std::string("spec: ") + e.what());
  }
  if (spec.degree != 2 * spec.gamma - 1)
  {
    throw ScenarioError("spec: degree must be 2 gamma - 1");
  }
  if (std::abs(spec.duration - graph.T) > 1e-12)
  {
    throw ScenarioError("graph.T: must equal the segment duration");
  }
  const int m = spec.m;
  const int n = spec.stateDim();
  auto dim = [](int expected, Eigen::Index actual, const std::string& field) {
    if (expected != actual)
    {
      throw ScenarioError(field + ": expected dimension " + std::to_string(expected) +
                          ", got " + std::to_string(actual));
    }
  };
  dim(n, Xd.dim(), "Xd");
  dim(m, U.dim(), "U");
  dim(m, scene_bounds.dim(), "scene_bounds");
  dim(n, start.size(), "start");
  dim(n, goal.size(), "goal");
  if (!isStationary(start, m))
  {
    throw ScenarioError("start: must be at rest");
  }
  if (!isStationary(goal, m))
  {
    throw ScenarioError("goal: must be at rest");
  }
  if (!contains(Xd, start))
  {
    throw ScenarioError("start: outside Xd");
  }
  if (!contains(Xd, goal))
  {
    throw ScenarioError("goal: outside Xd");
  }
  if (graph.N < 2 && graph.vertices.cols() < 1)
  {
    throw ScenarioError("graph.N: must be at least 2");
  }
  if (graph.vertices.cols() > 0)
  {
    dim(n, graph.vertices.rows(), "graph.vertices");
  }
  if (graph.sample_bounds)
  {
    dim(n, graph.sample_bounds->dim(), "graph.sample_bounds");
  }
  for (std::size_t i = 0; i < obstacles.size(); ++i)
  {
    const std::string field = "obstacles[" + std::to_string(i) + "]";
    dim(m, obstacles[i].shape.dim(), field);
    if (obstacles[i].times.size() != obstacles[i].offsets.size())
    {
      throw ScenarioError(field + ".waypoints: times and offsets differ in length");
    }
    for (std::size_t k = 0; k < obstacles[i].times.size(); ++k)
    {
      dim(m, obstacles[i].offsets[k].size(), field + ".waypoints");
      if (k > 0 && !(obstacles[i].times[k] > obstacles[i].times[k - 1]))
      {
        throw ScenarioError(field + ".waypoints: times must increase");
      }
      checkInside(scene_bounds, obstacles[i].shape.translated(obstacles[i].offsets[k]), field);
    }
    if (obstacles[i].times.empty())
    {
      checkInside(scene_bounds, obstacles[i].shape, field);
    }
  }
  if (!(rates.sim_hz > 0.0) || !(rates.mpc_hz > 0.0) || !(rates.cut_hz > 0.0))
  {
    throw ScenarioError("rates: must be positive");
  }
  const double dt = 1.0 / rates.sim_hz;
  integerRatio(mpc.h, dt, "mpc.h over the sim step");
  const int h_per_mpc = integerRatio(1.0 / rates.mpc_hz, mpc.h, "MPC period over mpc.h");
  integerRatio(rates.mpc_hz, rates.cut_hz, "cut period over the MPC period");
  integerRatio(graph.T, mpc.h, "graph.T over mpc.h");
  if (mpc.horizon < h_per_mpc)
  {
    throw ScenarioError("mpc.horizon: must cover one MPC period");
  }
  if (mpc.sqp_iters < 1)
  {
    throw ScenarioError("mpc.sqp_iters: must be at least 1");
  }
  try
  {
    mpc.weights.validate(n, m);
  }
  catch (const std::exception& e)
  {
    throw ScenarioError(std::string("mpc.weights: ") + e.what());
  }
  if (static_cast<int>(sim.gains.size()) != spec.gamma)
  {
    throw ScenarioError("sim.gains: need one gain per derivative order");
  }
  if (!(sim.w_max >= 0.0) || !(sim.timeout > 0.0))
  {
    throw ScenarioError("sim: w_max must be nonnegative and timeout positive");
  }
  if (!tube && spec.gamma != 2)
  {
    throw ScenarioError("tube: must be given explicitly unless gamma = 2");
  }
  if (tube)
  {
    dim(n, tube->state_error.dim(), "tube.state_error");
    dim(m, tube->input_margin.dim(), "tube.input_margin");
  }
}

TrackingTube Scenario::resolvedTube() const
{
  if (tube)
  {
    return *tube;
  }
  const double dt = 1.0 / rates.sim_hz;
  const Mat K = integratorGains(spec.m, sim.gains);
  return computeTube(spec.m, spec.gamma, K, sim.w_max, dt, 1.1,
                     feedforwardResidual(U, mpc.h, dt));
}

std::vector<Polytope> Scenario::obstaclesAt(double t) const
{
  std::vector<Polytope> out;
  out.reserve(obstacles.size());
  for (const auto& o : obstacles)
  {
    out.push_back(o.at(t));
  }
  return out;
}

std::shared_ptr<const BezierGraph> buildScenarioGraph(const Scenario& scenario)
{
  scenario.validate();
  const ReachOracle oracle =
      buildOracle(scenario.spec, scenario.Xd, scenario.U, scenario.resolvedTube());
  if (scenario.graph.vertices.cols() > 0)
  {
    Mat V(scenario.graph.vertices.rows(), scenario.graph.vertices.cols() + 2);
    V << scenario.graph.vertices, scenario.start, scenario.goal;
    return std::make_shared<const BezierGraph>(buildGraphFromVertices(
        V, oracle, scenario.graph.seed, scenario.graph.knn_prefilter));
  }
  const Box bounds = scenario.graph.sample_bounds ? *scenario.graph.sample_bounds
                                                  : boundingBox(oracle.eroded_Xd);
  GraphOptions opts;
  opts.stationary_fraction = scenario.graph.stationary_fraction;
  opts.extra_vertices = {scenario.start, scenario.goal};
  opts.knn_prefilter = scenario.graph.knn_prefilter;
  return std::make_shared<const BezierGraph>(
      buildGraph(scenario.graph.N, oracle, bounds, scenario.graph.seed, opts));
}

ClosedLoopSession::ClosedLoopSession(Scenario scenario)
    : ClosedLoopSession(scenario, buildScenarioGraph(scenario))
{
}

ClosedLoopSession::ClosedLoopSession(Scenario scenario, std::shared_ptr<const BezierGraph> graph)
    : scenario_(std::move(scenario)), graph_(std::move(graph))
{
  scenario_.validate();
  const BezierSpec& spec = scenario_.spec;
  if (!graph_ || graph_->spec.m != spec.m || graph_->spec.gamma != spec.gamma ||
      std::abs(graph_->spec.duration - spec.duration) > 1e-12)
  {
    throw ScenarioError("graph: does not match the scenario spec");
  }
  const int m = spec.m;
  tube_ = scenario_.resolvedTube();
  tube_pos_ = tube_.state_error.head(m);
  graph_oracle_ = buildOracle(spec, scenario_.Xd, scenario_.U, tube_);
  const BezierSpec step_spec = spec.withDuration(scenario_.mpc.h);
  step_oracle_ = buildOracle(step_spec, scenario_.Xd, scenario_.U, tube_);
  step_pos_map_ = positionMap(step_spec);
  graph_lift_map_ = positionMap(spec);
  K_ = integratorGains(m, scenario_.sim.gains);
  rng_.seed(scenario_.sim.disturbance_seed);
  dt_ = 1.0 / scenario_.rates.sim_hz;
  steps_per_h_ = integerRatio(scenario_.mpc.h, dt_, "mpc.h");
  h_per_mpc_ = integerRatio(1.0 / scenario_.rates.mpc_hz, scenario_.mpc.h, "MPC period");
  mpc_per_cut_ = integerRatio(scenario_.rates.mpc_hz, scenario_.rates.cut_hz, "cut period");
  obstacle_specs_ = scenario_.obstacles;
  x_ = scenario_.start;
  x_nom_ = scenario_.start;
  goal_vertex_ = nearestStationaryVertex(*graph_, scenario_.goal);
  goal_ = graph_->vertex(goal_vertex_);
  trace_.summary.vertices = static_cast<std::size_t>(graph_->numVertices());
  trace_.summary.edges = static_cast<std::size_t>(graph_->numEdges());
}

void ClosedLoopSession::event(const std::string& kind, const std::string& detail)
{
  trace_.events.push_back({t_, kind, detail});
}

void ClosedLoopSession::validateCommand(const Command& c) const
{
  const int m = scenario_.spec.m;
  const int count = static_cast<int>(obstacle_specs_.size());
  switch (c.kind)
  {
    case Command::Kind::MoveObstacle:
      if (c.obstacle < 0 || c.obstacle >= count)
      {
        throw ScenarioError("obstacle: unknown index " + std::to_string(c.obstacle));
      }
      checkDim(m, static_cast<int>(c.offset.size()), "offset");
      checkInside(scenario_.scene_bounds,
                  obstacle_specs_[c.obstacle].at(t_).translated(c.offset), "obstacle");
      break;
    case Command::Kind::AddObstacle:
      checkDim(m, c.shape.dim(), "shape");
      checkInside(scenario_.scene_bounds, c.shape, "obstacle");
      break;
    case Command::Kind::RemoveObstacle:
      if (c.obstacle < 0 || c.obstacle >= count)
      {
        throw ScenarioError("obstacle: unknown index " + std::to_string(c.obstacle));
      }
      break;
    case Command::Kind::SetGoal:
    {
      const Vec g = goalState(c.goal, m, scenario_.spec.stateDim());
      if (!scenario_.scene_bounds.contains(g.head(m)))
      {
        throw ScenarioError("goal: outside the scene bounds");
      }
      break;
    }
    case Command::Kind::Pause:
    case Command::Kind::Resume:
      break;
  }
}

void ClosedLoopSession::apply(const Command& c)
{
  validateCommand(c);
  if (c.kind == Command::Kind::Pause)
  {
    paused_ = true;
    return;
  }
  if (c.kind == Command::Kind::Resume)
  {
    paused_ = false;
    return;
  }
  pending_.push_back(c);
}

void ClosedLoopSession::applyPending()
{
  const int m = scenario_.spec.m;
  for (const auto& c : pending_)
  {
    try
    {
      validateCommand(c);
    }
    catch (const std::exception& e)
    {
      event("command_rejected", e.what());
      continue;
    }
    switch (c.kind)
    {
      case Command::Kind::MoveObstacle:
      {
        // Freeze any schedule at the current pose, then translate.
        MovingObstacle& o = obstacle_specs_[c.obstacle];
        o.shape = o.at(t_).translated(c.offset);
        o.times.clear();
        o.offsets.clear();
        event("move_obstacle", std::to_string(c.obstacle));
        break;
      }
      case Command::Kind::AddObstacle:
        obstacle_specs_.push_back(MovingObstacle{c.shape, {}, {}});
        event("add_obstacle", std::to_string(obstacle_specs_.size() - 1));
        break;
      case Command::Kind::RemoveObstacle:
        obstacle_specs_.erase(obstacle_specs_.begin() + c.obstacle);
        event("remove_obstacle", std::to_string(c.obstacle));
        break;
      case Command::Kind::SetGoal:
        goal_vertex_ = nearestStationaryVertex(
            *graph_, goalState(c.goal, m, scenario_.spec.stateDim()));
        goal_ = graph_->vertex(goal_vertex_);
        goal_reached_ = false;
        event("set_goal", std::to_string(goal_vertex_));
        break;
      default:
        break;
    }
    ++epoch_;
  }
  pending_.clear();
}

bool ClosedLoopSession::planValid() const
{
  const int m = scenario_.spec.m;
  std::vector<Vec> seq(warm_.begin(), warm_.end());
  seq.insert(seq.end(), tail_.begin(), tail_.end());
  for (std::size_t k = 0; k + 1 < seq.size(); ++k)
  {
    const Mat pts = piecePositions(step_pos_map_, m, seq[k], seq[k + 1]);
    if (!hullSafe(pts, inflated_, inflated_bounds_, cut_settings_))
    {
      return false;
    }
  }
  if (seq.size() == 1)
  {
    const Mat pts = seq[0].head(m);
    return hullSafe(pts, inflated_, inflated_bounds_, cut_settings_);
  }
  return true;
}

bool ClosedLoopSession::replan()
{
  const auto plan = planFrom(*graph_, mask_, graph_oracle_, graph_lift_map_, inflated_,
                             inflated_bounds_, cut_settings_, x_nom_, goal_vertex_);
  if (!plan)
  {
    return false;
  }
  const std::vector<Vec> ref = buildReference(plan->states, scenario_.spec, scenario_.mpc.h);
  const std::size_t len = static_cast<std::size_t>(scenario_.mpc.horizon) + 1;
  const std::size_t head = std::min(len, ref.size());
  warm_.assign(ref.begin(), ref.begin() + head);
  ref_ = warm_;
  tail_.assign(ref.begin() + head, ref.end());
  path_vertices_ = plan->vertices;
  planned_epoch_ = epoch_;
  ++trace_.summary.replans;
  std::ostringstream os;
  os << "vertices=" << plan->vertices.size() << " cost=" << plan->cost
     << (plan->virtual_start ? " virtual_start" : "");
  event("replan", os.str());
  return true;
}

void ClosedLoopSession::cutCycle()
{
  applyPending();
  const bool moving = std::any_of(obstacle_specs_.begin(), obstacle_specs_.end(),
                                  [](const MovingObstacle& o) { return o.moving(); });
  if (cut_done_ && !moving && snapshot_epoch_ == epoch_)
  {
    // Same obstacle set as the last cut, so the mask and plan stand.
    total_pairs_ += mask_.stats.pairs;
    total_resolved_ += mask_.stats.heuristicResolved();
    if (!warm_.empty() && planned_epoch_ == epoch_)
    {
      return;
    }
  }
  else
  {
    recut();
  }
  replanIfNeeded();
}

void ClosedLoopSession::recut()
{
  obstacles_.clear();
  inflated_.clear();
  inflated_bounds_.clear();
  // Moving obstacles are planned against over the next cut period plus
  // the MPC horizon.
  const double lookahead = 1.0 / scenario_.rates.cut_hz + scenario_.mpc.horizon * scenario_.mpc.h;
  for (const auto& o : obstacle_specs_)
  {
    obstacles_.push_back(o.at(t_));
    inflated_.push_back(inflate(o.sweep(t_, t_ + lookahead), tube_pos_).normalized());
    inflated_bounds_.push_back(boundingBox(inflated_.back()));
  }
  snapshot_epoch_ = epoch_;
  mask_ = cutGraph(*graph_, inflated_, cut_settings_);
  total_pairs_ += mask_.stats.pairs;
  total_resolved_ += mask_.stats.heuristicResolved();
  cut_done_ = true;
}

void ClosedLoopSession::replanIfNeeded()
{
  const bool have_plan = !warm_.empty();
  const bool valid = have_plan && planValid();
  if (have_plan && valid && planned_epoch_ == epoch_)
  {
    return;
  }
  if (replan())
  {
    return;
  }
  ++trace_.summary.no_path_cycles;
  if (!have_plan)
  {
    // Hold the (stationary) start until a path appears.
    warm_ = {x_nom_};
    ref_ = warm_;
    tail_.clear();
    path_vertices_.clear();
    event("no_path", "holding");
  }
  else
  {
    event("no_path", valid ? "keeping current plan" : "current plan blocked");
  }
}

void ClosedLoopSession::prepare()
{
  if (!prepared_)
  {
    cutCycle();
    prepared_ = true;
  }
}

void ClosedLoopSession::mpcCycle()
{
  const int m = scenario_.spec.m;
  const std::size_t len = static_cast<std::size_t>(scenario_.mpc.horizon) + 1;
  while (warm_.size() < len)
  {
    if (!tail_.empty())
    {
      warm_.push_back(tail_.front());
      ref_.push_back(tail_.front());
      tail_.pop_front();
    }
    else if (isStationary(warm_.back(), m))
    {
      warm_.push_back(warm_.back());
      ref_.push_back(ref_.back());
    }
    else
    {
      break;
    }
  }

  std::vector<Vec> states = warm_;
  bool constant = true;
  for (std::size_t k = 0; k < warm_.size() && constant; ++k)
  {
    constant = warm_[k] == x_nom_ && ref_[k] == x_nom_;
  }
  if (constant)
  {
    mpc_status_ = "hold";
  }
  else
  {
    MpcConfig cfg = scenario_.mpc;
    try
    {
      const MpcProblem prob = buildMpcProblem(ref_, warm_, Box::point(x_nom_), step_oracle_,
                                              inflated_, cfg);
      const MpcSolution sol = sqpRefine(prob, inflated_, cfg);
      ++trace_.summary.mpc_solves;
      if (sol.verified)
      {
        states = sol.states;
        mpc_status_ = "solved";
      }
      else
      {
        ++trace_.summary.mpc_fallbacks;
        mpc_status_ = std::string("fallback_") + qp::name(sol.status);
        event("mpc_fallback", sol.message);
      }
    }
    catch (const CorridorError& e)
    {
      ++trace_.summary.mpc_fallbacks;
      mpc_status_ = "corridor_failure";
      event("corridor_failure", e.what());
    }
  }

  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(h_per_mpc_),
                                              states.size() - 1);
  std::vector<Vec> executed(states.begin(), states.begin() + k + 1);
  while (executed.size() < static_cast<std::size_t>(h_per_mpc_) + 1)
  {
    executed.push_back(executed.back());
  }
  const BezierSpec step_spec = scenario_.spec.withDuration(scenario_.mpc.h);
  active_ = piecesFor(step_spec, executed);
  warm_.assign(states.begin() + k, states.end());
  ref_.erase(ref_.begin(), ref_.begin() + k);
}

bool ClosedLoopSession::advance()
{
  if (finished_)
  {
    return false;
  }
  if (paused_)
  {
    return true;
  }
  const int m = scenario_.spec.m;
  const int g = scenario_.spec.gamma;
  if (cycle_ == 0 && scenario_.sim.stop_at_goal &&
      tube_.state_error.contains(x_ - goal_))
  {
    goal_reached_ = true;
    trace_.summary.goal_time = t_;
    finished_ = true;
    event("goal_reached");
    return false;
  }
  if (cycle_ % static_cast<std::uint64_t>(mpc_per_cut_) == 0 && !(cycle_ == 0 && prepared_))
  {
    cutCycle();
  }
  prepared_ = true;
  mpcCycle();

  const double h = scenario_.mpc.h;
  const double period = h * h_per_mpc_;
  std::uniform_real_distribution<double> unif(-scenario_.sim.w_max, scenario_.sim.w_max);
  const double t0 = t_;
  for (std::size_t p = 0; p < active_.size(); ++p)
  {
    const StateSpaceCurve& piece = active_[p];
    trace_.summary.path_length += pathLengthBound(piece.positionPoints());
    Vec xd = piece.evaluate(0.0);
    for (int s = 0; s < steps_per_h_; ++s)
    {
      const double tau1 = h * (s + 1) / steps_per_h_;
      const Vec xd_next = piece.evaluate(tau1);
      const Vec u_ff = (xd_next - xd).segment((g - 1) * m, m) / dt_;
      const Vec u = trackingController(x_, xd, u_ff, K_);
      Vec w(m);
      for (int i = 0; i < m; ++i)
      {
        w(i) = scenario_.sim.w_max > 0.0 ? unif(rng_) : 0.0;
      }
      x_ = step(m, g, x_, u, w, dt_);
      xd = xd_next;

      TraceSample smp;
      smp.t = t0 + h * static_cast<double>(p) + h * (s + 1) / steps_per_h_;
      smp.x = x_;
      smp.x_nominal = xd;
      smp.u = u;
      smp.w = w;
      smp.input_violation = !scenario_.U.contains(u, 1e-9);
      smp.state_violation = !contains(scenario_.Xd, x_, 1e-9);
      for (const auto& o : obstacle_specs_)
      {
        if (contains(o.at(smp.t), x_.head(m), 0.0))
        {
          smp.collision = true;
          break;
        }
      }
      smp.tube_violation =
          scenario_.sim.check_tube && !tube_.state_error.contains(x_ - xd, 1e-12);
      trace_.summary.collisions += smp.collision;
      trace_.summary.input_violations += smp.input_violation;
      trace_.summary.state_violations += smp.state_violation;
      trace_.summary.tube_violations += smp.tube_violation;
      trace_.samples.push_back(std::move(smp));
    }
  }
  x_nom_ = active_.back().lifted.col(active_.back().spec.degree);
  ++cycle_;
  t_ = period * static_cast<double>(cycle_);

  if (!goal_reached_ && tube_.state_error.contains(x_ - goal_))
  {
    goal_reached_ = true;
    trace_.summary.goal_time = t_;
    event("goal_reached");
    if (scenario_.sim.stop_at_goal)
    {
      finished_ = true;
    }
  }
  if (t_ >= scenario_.sim.timeout - 1e-9)
  {
    if (!goal_reached_)
    {
      event("timeout");
    }
    finished_ = true;
  }
  return !finished_;
}

ClosedLoopTrace ClosedLoopSession::takeTrace()
{
  trace_.summary.steps = trace_.samples.size();
  trace_.summary.success = goal_reached_;
  trace_.summary.heuristic_fraction =
      total_pairs_ == 0 ? 1.0
                        : static_cast<double>(total_resolved_) / static_cast<double>(total_pairs_);
  return std::move(trace_);
}

ClosedLoopTrace runClosedLoop(const Scenario& scenario)
{
  return runClosedLoop(scenario, buildScenarioGraph(scenario));
}

ClosedLoopTrace runClosedLoop(const Scenario& scenario, std::shared_ptr<const BezierGraph> graph)
{
  ClosedLoopSession session(scenario, std::move(graph));
  while (session.advance())
  {
  }
  return session.takeTrace();
}

PlanResult planOnce(const Scenario& scenario, const BezierGraph& graph)
{
  scenario.validate();
  PlanResult out;
  out.tube = scenario.resolvedTube();
  const int m = scenario.spec.m;
  const Box tube_pos = out.tube.state_error.head(m);
  std::vector<Polytope> inflated;
  std::vector<Box> bounds;
  for (const auto& o : scenario.obstaclesAt(0.0))
  {
    inflated.push_back(inflate(o, tube_pos).normalized());
    bounds.push_back(boundingBox(inflated.back()));
  }
  const CutSettings cs;
  out.mask = cutGraph(graph, inflated, cs);
  const ReachOracle oracle = buildOracle(scenario.spec, scenario.Xd, scenario.U, out.tube);
  const int goal_vertex = nearestStationaryVertex(graph, scenario.goal);
  const auto plan = planFrom(graph, out.mask, oracle, positionMap(scenario.spec), inflated,
                             bounds, cs, scenario.start, goal_vertex);
  if (!plan)
  {
    return out;
  }
  GraphPath path;
  path.vertices = plan->vertices;
  path.cost = plan->cost;
  for (std::size_t i = 0; i + 1 < plan->vertices.size(); ++i)
  {
    const int from = plan->vertices[i];
    for (int e = graph.out_offsets[from]; e < graph.out_offsets[from + 1]; ++e)
    {
      if (graph.edges[e].to == plan->vertices[i + 1])
      {
        path.edges.push_back(e);
        break;
      }
    }
  }
  out.path = path;
  out.reference = buildReference(plan->states, scenario.spec, scenario.mpc.h);
  const std::size_t len = static_cast<std::size_t>(scenario.mpc.horizon) + 1;
  const std::vector<Vec> ref = padReference(out.reference, len, m);
  const std::vector<Vec> window(ref.begin(), ref.begin() + len);
  const ReachOracle step_oracle = buildOracle(scenario.spec.withDuration(scenario.mpc.h),
                                              scenario.Xd, scenario.U, out.tube);
  try
  {
    const MpcProblem prob = buildMpcProblem(window, window, Box::point(window.front()),
                                            step_oracle, inflated, scenario.mpc);
    out.refined = sqpRefine(prob, inflated, scenario.mpc);
  }
  catch (const CorridorError&)
  {
  }
  return out;
}
}  // namespace bezgraph
