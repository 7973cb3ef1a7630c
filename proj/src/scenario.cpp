#include <bezgraph/scenario.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace bezgraph
{
namespace
{
std::string sub(const std::string& field, const std::string& key)
{
  return field.empty() ? key : field + "." + key;
}

[[noreturn]] void fail(const std::string& field, const std::string& what)
{
  throw ScenarioError(field + ": " + what);
}

const Json& require(const Json& j, const std::string& key, const std::string& field)
{
  if (!j.is_object() || !j.contains(key))
  {
    fail(sub(field, key), "missing");
  }
  return j.at(key);
}

double number(const Json& j, const std::string& field)
{
  if (!j.is_number())
  {
    fail(field, "expected a number");
  }
  return j.get<double>();
}

int integer(const Json& j, const std::string& field)
{
  if (!j.is_number_integer())
  {
    fail(field, "expected an integer");
  }
  return j.get<int>();
}

template <typename T>
T optionalValue(const Json& j, const std::string& key, T fallback, const std::string& field)
{
  if (!j.contains(key))
  {
    return fallback;
  }
  const Json& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>)
  {
    if (!v.is_boolean())
    {
      fail(sub(field, key), "expected a boolean");
    }
    return v.get<bool>();
  }
  else if constexpr (std::is_integral_v<T>)
  {
    if (!v.is_number_integer())
    {
      fail(sub(field, key), "expected an integer");
    }
    return v.get<T>();
  }
  else
  {
    return static_cast<T>(number(v, sub(field, key)));
  }
}

Mat matFromJson(const Json& j, const std::string& field)
{
  if (!j.is_array() || j.empty() || !j[0].is_array())
  {
    fail(field, "expected a non-empty array of rows");
  }
  const std::size_t cols = j[0].size();
  Mat M(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r)
  {
    const std::string rf = field + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || j[r].size() != cols)
    {
      fail(rf, "rows must all have " + std::to_string(cols) + " entries");
    }
    for (std::size_t c = 0; c < cols; ++c)
    {
      M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          number(j[r][c], rf + "[" + std::to_string(c) + "]");
    }
  }
  return M;
}

Json matToJson(const Mat& M)
{
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r)
  {
    rows.push_back(vecToJson(M.row(r).transpose()));
  }
  return rows;
}

/// Scalar (times identity), diagonal list, or full matrix.
Mat weightFromJson(const Json& j, int n, const std::string& field)
{
  if (j.is_number())
  {
    return j.get<double>() * Mat::Identity(n, n);
  }
  if (j.is_array() && !j.empty() && j[0].is_number())
  {
    const Vec d = vecFromJson(j, field);
    if (d.size() != n)
    {
      fail(field, "diagonal must have " + std::to_string(n) + " entries");
    }
    return d.asDiagonal();
  }
  const Mat M = matFromJson(j, field);
  if (M.rows() != n || M.cols() != n)
  {
    fail(field, "must be " + std::to_string(n) + " x " + std::to_string(n));
  }
  return M;
}

MovingObstacle obstacleFromJson(const Json& j, const std::string& field)
{
  MovingObstacle o;
  if (j.is_object() && j.contains("shape"))
  {
    o.shape = polytopeFromJson(j.at("shape"), sub(field, "shape"));
    if (j.contains("waypoints"))
    {
      const Json& wps = j.at("waypoints");
      if (!wps.is_array())
      {
        fail(sub(field, "waypoints"), "expected an array");
      }
      for (std::size_t k = 0; k < wps.size(); ++k)
      {
        const std::string wf = sub(field, "waypoints") + "[" + std::to_string(k) + "]";
        o.times.push_back(number(require(wps[k], "t", wf), sub(wf, "t")));
        o.offsets.push_back(vecFromJson(require(wps[k], "offset", wf), sub(wf, "offset")));
      }
    }
    return o;
  }
  o.shape = polytopeFromJson(j, field);
  return o;
}

Json obstacleToJson(const MovingObstacle& o)
{
  if (o.times.empty())
  {
    return polytopeToJson(o.shape);
  }
  Json wps = Json::array();
  for (std::size_t k = 0; k < o.times.size(); ++k)
  {
    wps.push_back({{"t", o.times[k]}, {"offset", vecToJson(o.offsets[k])}});
  }
  return {{"shape", polytopeToJson(o.shape)}, {"waypoints", wps}};
}
}  // namespace

Json vecToJson(const Eigen::Ref<const Vec>& v)
{
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
  {
    a.push_back(v(i));
  }
  return a;
}

Vec vecFromJson(const Json& j, const std::string& field)
{
  if (!j.is_array())
  {
    fail(field, "expected an array of numbers");
  }
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
  {
    v(static_cast<Eigen::Index>(i)) = number(j[i], field + "[" + std::to_string(i) + "]");
  }
  return v;
}

Json boxToJson(const Box& box) { return {{"lo", vecToJson(box.lo)}, {"hi", vecToJson(box.hi)}}; }

Box boxFromJson(const Json& j, const std::string& field)
{
  const Vec lo = vecFromJson(require(j, "lo", field), sub(field, "lo"));
  const Vec hi = vecFromJson(require(j, "hi", field), sub(field, "hi"));
  try
  {
    return Box(lo, hi);
  }
  catch (const std::exception& e)
  {
    fail(field, e.what());
  }
}

Json polytopeToJson(const Polytope& p)
{
  if (p.box())
  {
    return boxToJson(*p.box());
  }
  return {{"A", matToJson(p.A())}, {"b", vecToJson(p.b())}};
}

Polytope polytopeFromJson(const Json& j, const std::string& field)
{
  if (j.is_object() && j.contains("lo"))
  {
    return Polytope::fromBox(boxFromJson(j, field));
  }
  const Mat A = matFromJson(require(j, "A", field), sub(field, "A"));
  const Vec b = vecFromJson(require(j, "b", field), sub(field, "b"));
  if (A.rows() != b.size())
  {
    fail(field, "A has " + std::to_string(A.rows()) + " rows but b has " +
                    std::to_string(b.size()));
  }
  try
  {
    return Polytope(A, b);
  }
  catch (const std::exception& e)
  {
    fail(field, e.what());
  }
}

Scenario scenarioFromJson(const Json& doc)
{
  if (!doc.is_object())
  {
    fail("document", "expected an object");
  }
  if (doc.contains("schema") && doc.at("schema") != kScenarioSchema)
  {
    fail("schema", std::string("expected \"") + kScenarioSchema + "\"");
  }
  Scenario s;
  s.version = integer(require(doc, "version", ""), "version");
  if (s.version != kScenarioVersion)
  {
    fail("version", "unsupported version " + std::to_string(s.version));
  }
  if (doc.contains("name"))
  {
    s.name = doc.at("name").get<std::string>();
  }
  const Json& spec = require(doc, "spec", "");
  const int m = integer(require(spec, "m", "spec"), "spec.m");
  const int gamma = integer(require(spec, "gamma", "spec"), "spec.gamma");

  const Json empty = Json::object();
  const Json& graph = doc.contains("graph") ? doc.at("graph") : empty;
  s.graph.N = optionalValue(graph, "N", s.graph.N, "graph");
  s.graph.T = optionalValue(graph, "T", s.graph.T, "graph");
  s.graph.seed = optionalValue<std::uint64_t>(graph, "seed", s.graph.seed, "graph");
  s.graph.stationary_fraction =
      optionalValue(graph, "stationary_fraction", s.graph.stationary_fraction, "graph");
  s.graph.knn_prefilter = optionalValue(graph, "knn_prefilter", s.graph.knn_prefilter, "graph");
  if (graph.contains("sample_bounds"))
  {
    s.graph.sample_bounds = boxFromJson(graph.at("sample_bounds"), "graph.sample_bounds");
  }
  if (graph.contains("vertices"))
  {
    s.graph.vertices = matFromJson(graph.at("vertices"), "graph.vertices").transpose();
  }
  try
  {
    s.spec = BezierSpec::boundaryValue(m, gamma, s.graph.T);
  }
  catch (const std::exception& e)
  {
    fail("spec", e.what());
  }
  const int n = s.spec.stateDim();

  s.Xd = polytopeFromJson(require(doc, "Xd", ""), "Xd");
  s.U = boxFromJson(require(doc, "U", ""), "U");
  s.scene_bounds = boxFromJson(require(doc, "scene_bounds", ""), "scene_bounds");
  if (doc.contains("tube"))
  {
    const Json& t = doc.at("tube");
    s.tube = TrackingTube{boxFromJson(require(t, "state_error", "tube"), "tube.state_error"),
                          boxFromJson(require(t, "input_margin", "tube"), "tube.input_margin")};
  }
  if (doc.contains("obstacles"))
  {
    const Json& obs = doc.at("obstacles");
    if (!obs.is_array())
    {
      fail("obstacles", "expected an array");
    }
    for (std::size_t i = 0; i < obs.size(); ++i)
    {
      s.obstacles.push_back(obstacleFromJson(obs[i], "obstacles[" + std::to_string(i) + "]"));
    }
  }
  s.start = vecFromJson(require(doc, "start", ""), "start");
  s.goal = vecFromJson(require(doc, "goal", ""), "goal");

  s.mpc.weights = MpcWeights::defaults(m, gamma);
  if (doc.contains("mpc"))
  {
    const Json& j = doc.at("mpc");
    s.mpc.horizon = optionalValue(j, "horizon", s.mpc.horizon, "mpc");
    s.mpc.h = optionalValue(j, "h", s.mpc.h, "mpc");
    s.mpc.sqp_iters = optionalValue(j, "sqp_iters", s.mpc.sqp_iters, "mpc");
    s.mpc.trust_radius = optionalValue(j, "trust_radius", s.mpc.trust_radius, "mpc");
    s.mpc.verify_tol = optionalValue(j, "verify_tol", s.mpc.verify_tol, "mpc");
    s.mpc.qp.max_iter = optionalValue(j, "max_iter", s.mpc.qp.max_iter, "mpc");
    if (j.contains("Q"))
    {
      s.mpc.weights.Q = weightFromJson(j.at("Q"), n, "mpc.Q");
    }
    if (j.contains("Fw"))
    {
      s.mpc.weights.Fw = weightFromJson(j.at("Fw"), n, "mpc.Fw");
    }
    if (j.contains("R"))
    {
      s.mpc.weights.R = weightFromJson(j.at("R"), m, "mpc.R");
    }
    if (j.contains("V"))
    {
      s.mpc.weights.V = weightFromJson(j.at("V"), n, "mpc.V");
    }
  }
  if (doc.contains("rates"))
  {
    const Json& j = doc.at("rates");
    s.rates.cut_hz = optionalValue(j, "cut_hz", s.rates.cut_hz, "rates");
    s.rates.mpc_hz = optionalValue(j, "mpc_hz", s.rates.mpc_hz, "rates");
    s.rates.sim_hz = optionalValue(j, "sim_hz", s.rates.sim_hz, "rates");
  }
  if (doc.contains("sim"))
  {
    const Json& j = doc.at("sim");
    s.sim.timeout = optionalValue(j, "timeout", s.sim.timeout, "sim");
    s.sim.w_max = optionalValue(j, "w_max", s.sim.w_max, "sim");
    s.sim.disturbance_seed =
        optionalValue<std::uint64_t>(j, "disturbance_seed", s.sim.disturbance_seed, "sim");
    s.sim.check_tube = optionalValue(j, "check_tube", s.sim.check_tube, "sim");
    s.sim.stop_at_goal = optionalValue(j, "stop_at_goal", s.sim.stop_at_goal, "sim");
    if (j.contains("gains"))
    {
      const Vec g = vecFromJson(j.at("gains"), "sim.gains");
      s.sim.gains.assign(g.data(), g.data() + g.size());
    }
  }
  s.validate();
  return s;
}

Json scenarioToJson(const Scenario& s)
{
  Json doc;
  doc["schema"] = kScenarioSchema;
  doc["version"] = s.version;
  doc["name"] = s.name;
  doc["spec"] = {{"m", s.spec.m}, {"gamma", s.spec.gamma}};
  doc["Xd"] = polytopeToJson(s.Xd);
  doc["U"] = boxToJson(s.U);
  doc["scene_bounds"] = boxToJson(s.scene_bounds);
  if (s.tube)
  {
    doc["tube"] = {{"state_error", boxToJson(s.tube->state_error)},
                   {"input_margin", boxToJson(s.tube->input_margin)}};
  }
  Json obs = Json::array();
  for (const auto& o : s.obstacles)
  {
    obs.push_back(obstacleToJson(o));
  }
  doc["obstacles"] = obs;
  doc["start"] = vecToJson(s.start);
  doc["goal"] = vecToJson(s.goal);
  Json graph = {{"N", s.graph.N},
                {"T", s.graph.T},
                {"seed", s.graph.seed},
                {"stationary_fraction", s.graph.stationary_fraction},
                {"knn_prefilter", s.graph.knn_prefilter}};
  if (s.graph.sample_bounds)
  {
    graph["sample_bounds"] = boxToJson(*s.graph.sample_bounds);
  }
  if (s.graph.vertices.cols() > 0)
  {
    graph["vertices"] = matToJson(s.graph.vertices.transpose());
  }
  doc["graph"] = graph;
  doc["mpc"] = {{"horizon", s.mpc.horizon},
                {"h", s.mpc.h},
                {"sqp_iters", s.mpc.sqp_iters},
                {"trust_radius", s.mpc.trust_radius},
                {"verify_tol", s.mpc.verify_tol},
                {"max_iter", s.mpc.qp.max_iter},
                {"Q", matToJson(s.mpc.weights.Q)},
                {"Fw", matToJson(s.mpc.weights.Fw)},
                {"R", matToJson(s.mpc.weights.R)},
                {"V", matToJson(s.mpc.weights.V)}};
  doc["rates"] = {{"cut_hz", s.rates.cut_hz}, {"mpc_hz", s.rates.mpc_hz}, {"sim_hz", s.rates.sim_hz}};
  doc["sim"] = {{"timeout", s.sim.timeout},
                {"w_max", s.sim.w_max},
                {"gains", s.sim.gains},
                {"disturbance_seed", s.sim.disturbance_seed},
                {"check_tube", s.sim.check_tube},
                {"stop_at_goal", s.sim.stop_at_goal}};
  return doc;
}

Scenario loadScenario(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
  {
    throw ScenarioError("cannot open " + path);
  }
  Json doc;
  try
  {
    doc = Json::parse(in);
  }
  catch (const Json::parse_error& e)
  {
    throw ScenarioError(path + ": " + e.what());
  }
  return scenarioFromJson(doc);
}

void saveScenario(const Scenario& scenario, const std::string& path)
{
  std::ofstream out(path);
  if (!out)
  {
    throw ScenarioError("cannot write " + path);
  }
  out << std::setw(2) << scenarioToJson(scenario) << "\n";
}

Json graphToJson(const BezierGraph& g)
{
  Json verts = Json::array();
  for (int i = 0; i < g.numVertices(); ++i)
  {
    verts.push_back(vecToJson(g.vertices.col(i)));
  }
  Json edges = Json::array();
  for (const auto& e : g.edges)
  {
    edges.push_back(Json::array({e.from, e.to, e.cost}));
  }
  return {{"vertices", verts}, {"edges", edges}};
}

Json cutStatsToJson(const CutStats& s)
{
  return {{"pairs", s.pairs},
          {"heuristic_safe", s.heuristic_safe},
          {"heuristic_unsafe", s.heuristic_unsafe},
          {"qp_solves", s.qp_solves},
          {"qp_safe", s.qp_safe},
          {"qp_unsafe", s.qp_unsafe},
          {"qp_unconverged", s.qp_unconverged},
          {"skipped", s.skipped},
          {"broadphase_safe", s.broadphase_safe},
          {"heuristic_fraction", s.heuristicFraction()}};
}

Json maskToJson(const CutMask& mask)
{
  std::vector<std::uint8_t> bytes((mask.alive.size() + 7) / 8, 0);
  for (std::size_t e = 0; e < mask.alive.size(); ++e)
  {
    if (mask.alive[e])
    {
      bytes[e / 8] |= static_cast<std::uint8_t>(1u << (e % 8));
    }
  }
  std::ostringstream hex;
  hex << std::hex << std::setfill('0');
  for (auto b : bytes)
  {
    hex << std::setw(2) << static_cast<int>(b);
  }
  std::size_t counts[4] = {0, 0, 0, 0};
  for (auto p : mask.provenance)
  {
    ++counts[static_cast<int>(p)];
  }
  Json prov;
  for (int k = 0; k < 4; ++k)
  {
    prov[name(static_cast<Provenance>(k))] = counts[k];
  }
  return {{"edges", mask.alive.size()},
          {"alive_count", mask.aliveCount()},
          {"alive_bitset", hex.str()},
          {"provenance_counts", prov},
          {"stats", cutStatsToJson(mask.stats)}};
}

Json traceSampleToJson(const TraceSample& s)
{
  return {{"t", s.t},
          {"x", vecToJson(s.x)},
          {"x_nominal", vecToJson(s.x_nominal)},
          {"u", vecToJson(s.u)},
          {"w", vecToJson(s.w)},
          {"collision", s.collision},
          {"state_violation", s.state_violation},
          {"input_violation", s.input_violation},
          {"tube_violation", s.tube_violation}};
}

void writeTraceJsonLines(const ClosedLoopTrace& trace, std::ostream& out)
{
  for (const auto& s : trace.samples)
  {
    out << traceSampleToJson(s).dump() << "\n";
  }
}

Json traceSummaryToJson(const ClosedLoopTrace& trace)
{
  const TraceSummary& s = trace.summary;
  Json events = Json::array();
  for (const auto& e : trace.events)
  {
    events.push_back({{"t", e.t}, {"kind", e.kind}, {"detail", e.detail}});
  }
  return {{"success", s.success},
          {"goal_time", s.goal_time ? Json(*s.goal_time) : Json(nullptr)},
          {"steps", s.steps},
          {"collisions", s.collisions},
          {"state_violations", s.state_violations},
          {"input_violations", s.input_violations},
          {"tube_violations", s.tube_violations},
          {"replans", s.replans},
          {"no_path_cycles", s.no_path_cycles},
          {"mpc_solves", s.mpc_solves},
          {"mpc_fallbacks", s.mpc_fallbacks},
          {"path_length", s.path_length},
          {"heuristic_fraction", s.heuristic_fraction},
          {"vertices", s.vertices},
          {"edges", s.edges},
          {"events", events}};
}
}  // namespace bezgraph
