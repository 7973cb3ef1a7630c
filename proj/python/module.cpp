#include <bezgraph/generators.hpp>
#include <bezgraph/scenario.hpp>
#include <bezgraph/service.hpp>
#include <bezgraph/session.hpp>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>

namespace py = pybind11;
using namespace bezgraph;

namespace
{
Json toJson(const py::handle& obj)
{
  const auto dumps = py::module_::import("json").attr("dumps");
  return Json::parse(dumps(obj).cast<std::string>());
}

py::object fromJson(const Json& j)
{
  return py::module_::import("json").attr("loads")(j.dump());
}

BezierCurve curveOf(const Mat& points, double duration)
{
  BezierSpec spec;
  spec.m = static_cast<int>(points.rows());
  spec.gamma = 1;
  spec.degree = static_cast<int>(points.cols()) - 1;
  spec.duration = duration;
  spec.validate();
  return {spec, points};
}

struct PyGraph
{
  std::shared_ptr<const BezierGraph> g;
};

std::shared_ptr<const BezierGraph> graphFor(const Scenario& s, const std::optional<PyGraph>& graph)
{
  if (graph)
  {
    return graph->g;
  }
  py::gil_scoped_release release;
  return buildScenarioGraph(s);
}

Mat statesMatrix(const std::vector<Vec>& states, int n)
{
  Mat out(static_cast<Eigen::Index>(states.size()), n);
  for (std::size_t k = 0; k < states.size(); ++k)
  {
    out.row(static_cast<Eigen::Index>(k)) = states[k].transpose();
  }
  return out;
}

std::vector<Polytope> obstaclesFrom(const py::list& items, int m)
{
  std::vector<Polytope> out;
  for (std::size_t i = 0; i < items.size(); ++i)
  {
    const std::string field = "obstacles[" + std::to_string(i) + "]";
    out.push_back(polytopeFromJson(toJson(items[i]), field));
    checkDim(m, out.back().dim(), "cut: obstacle");
  }
  return out;
}

class PySession
{
public:
  PySession(const Scenario& s, std::shared_ptr<const BezierGraph> g)
      : loop_(std::make_unique<ClosedLoopSession>(s, std::move(g)))
  {
  }

  ClosedLoopSession& loop() { return *loop_; }
  std::uint64_t next_seq = 0;

private:
  std::unique_ptr<ClosedLoopSession> loop_;
};
}  // namespace

PYBIND11_MODULE(_core, m)
{
  m.doc() = "Kinodynamic planning on graphs of reachable Bezier curves.";

  m.attr("FRAME_SCHEMA") = kFrameSchema;
  m.attr("FRAME_VERSION") = kFrameVersion;
  m.attr("SCENARIO_SCHEMA") = kScenarioSchema;
  m.attr("SCENARIO_VERSION") = kScenarioVersion;

  // Bezier algebra on m x (p+1) control point arrays.
  m.def("bernstein", [](int degree, double duration, double t) {
    BezierSpec spec;
    spec.m = 1;
    spec.gamma = 1;
    spec.degree = degree;
    spec.duration = duration;
    spec.validate();
    return bernsteinEval(spec, t);
  }, py::arg("degree"), py::arg("duration"), py::arg("t"));
  m.def("evaluate", [](const Mat& points, double duration, double t) {
    return curveOf(points, duration).evaluate(t);
  }, py::arg("points"), py::arg("duration"), py::arg("t"));
  m.def("subdivide", [](const Mat& points, double duration, const std::vector<double>& times) {
    std::vector<std::pair<Mat, double>> out;
    for (const auto& c : subdivide(curveOf(points, duration), times))
    {
      out.emplace_back(c.points, c.spec.duration);
    }
    return out;
  }, py::arg("points"), py::arg("duration"), py::arg("times"),
     "Split at increasing times in (0, duration); returns [(points, duration)].");
  m.def("path_length_bound", py::overload_cast<const Mat&>(&pathLengthBound), py::arg("points"));

  // Scenarios are exchanged as plain dicts in the versioned document layout.
  m.def("preset", [](const std::string& name, std::uint64_t seed) {
    return fromJson(scenarioToJson(presetScenario(name, seed)));
  }, py::arg("name"), py::arg("seed") = 1);
  m.def("validate_scenario", [](const py::dict& doc) {
    return fromJson(scenarioToJson(scenarioFromJson(toJson(doc))));
  }, py::arg("scenario"), "Parses and re-serializes; raises ValueError naming the bad field.");

  m.def("check_edge", [](const py::dict& doc, const Vec& x1, const Vec& x2) {
    const Scenario s = scenarioFromJson(toJson(doc));
    const ReachOracle o = buildOracle(s.spec, s.Xd, s.U, s.resolvedTube());
    return checkEdge(o, x1, x2);
  }, py::arg("scenario"), py::arg("x1"), py::arg("x2"));
  m.def("connect", [](const py::dict& doc, const Vec& x1, const Vec& x2) {
    const Scenario s = scenarioFromJson(toJson(doc));
    const ReachOracle o = buildOracle(s.spec, s.Xd, s.U, s.resolvedTube());
    return connectCurve(o, x1, x2).lifted;
  }, py::arg("scenario"), py::arg("x1"), py::arg("x2"),
     "Lifted control points of the connecting curve; raises ValueError for an infeasible pair.");

  py::class_<PyGraph>(m, "Graph")
      .def_property_readonly("num_vertices", [](const PyGraph& g) { return g.g->numVertices(); })
      .def_property_readonly("num_edges", [](const PyGraph& g) { return g.g->numEdges(); })
      .def_property_readonly("duration", [](const PyGraph& g) { return g.g->spec.duration; })
      .def_property_readonly("vertices", [](const PyGraph& g) { return Mat(g.g->vertices.transpose()); })
      .def_property_readonly("edges", [](const PyGraph& g) {
        Eigen::Matrix<int, Eigen::Dynamic, 2, Eigen::RowMajor> e(g.g->numEdges(), 2);
        for (int i = 0; i < g.g->numEdges(); ++i)
        {
          e(i, 0) = g.g->edges[i].from;
          e(i, 1) = g.g->edges[i].to;
        }
        return e;
      })
      .def_property_readonly("costs", [](const PyGraph& g) {
        Vec c(g.g->numEdges());
        for (int i = 0; i < g.g->numEdges(); ++i)
        {
          c(i) = g.g->edges[i].cost;
        }
        return c;
      })
      .def("control_points", [](const PyGraph& g, int e) {
        if (e < 0 || e >= g.g->numEdges())
        {
          throw py::index_error("edge index out of range");
        }
        return Mat(g.g->liftedPoints(e));
      }, py::arg("edge"))
      .def("to_json", [](const PyGraph& g) { return fromJson(graphToJson(*g.g)); });

  m.def("build_graph", [](const py::dict& doc) {
    const Scenario s = scenarioFromJson(toJson(doc));
    return PyGraph{graphFor(s, std::nullopt)};
  }, py::arg("scenario"));

  m.def("cut", [](const PyGraph& g, const py::list& obstacles, bool use_heuristic) {
    const auto obs = obstaclesFrom(obstacles, g.g->spec.m);
    CutSettings cs;
    cs.use_heuristic = use_heuristic;
    cs.use_broadphase = use_heuristic;
    CutMask mask;
    {
      py::gil_scoped_release release;
      mask = cutGraph(*g.g, obs, cs);
    }
    py::dict out = fromJson(maskToJson(mask));
    out["alive"] = py::cast(std::vector<bool>(mask.alive.begin(), mask.alive.end()));
    return out;
  }, py::arg("graph"), py::arg("obstacles"), py::arg("use_heuristic") = true,
     "Cut mask for obstacles given as {lo, hi} or {A, b}.");

  m.def("plan", [](const py::dict& doc, std::optional<PyGraph> graph) {
    const Scenario s = scenarioFromJson(toJson(doc));
    const auto g = graphFor(s, graph);
    PlanResult r;
    {
      py::gil_scoped_release release;
      r = planOnce(s, *g);
    }
    py::dict out;
    out["mask"] = fromJson(maskToJson(r.mask));
    if (!r.path)
    {
      out["path"] = py::none();
      return out;
    }
    out["path"] = py::cast(r.path->vertices);
    out["cost"] = r.path->cost;
    out["reference"] = statesMatrix(r.reference, s.spec.stateDim());
    if (r.refined)
    {
      out["refined"] = statesMatrix(r.refined->states, s.spec.stateDim());
      out["refined_verified"] = r.refined->verified;
    }
    return out;
  }, py::arg("scenario"), py::arg("graph") = py::none());

  m.def("simulate", [](const py::dict& doc, std::optional<PyGraph> graph) {
    const Scenario s = scenarioFromJson(toJson(doc));
    const auto g = graphFor(s, graph);
    ClosedLoopTrace tr;
    {
      py::gil_scoped_release release;
      tr = runClosedLoop(s, g);
    }
    Vec t(static_cast<Eigen::Index>(tr.samples.size()));
    std::vector<Vec> xs;
    for (std::size_t k = 0; k < tr.samples.size(); ++k)
    {
      t(static_cast<Eigen::Index>(k)) = tr.samples[k].t;
      xs.push_back(tr.samples[k].x);
    }
    py::dict out;
    out["summary"] = fromJson(traceSummaryToJson(tr));
    out["t"] = t;
    out["x"] = statesMatrix(xs, s.spec.stateDim());
    return out;
  }, py::arg("scenario"), py::arg("graph") = py::none());

  py::class_<PySession>(m, "Session")
      .def(py::init([](const py::dict& doc, std::optional<PyGraph> graph) {
        const Scenario s = scenarioFromJson(toJson(doc));
        return std::make_unique<PySession>(s, graphFor(s, graph));
      }), py::arg("scenario"), py::arg("graph") = py::none())
      .def("prepare", [](PySession& s) { s.loop().prepare(); })
      .def("advance", [](PySession& s) {
        py::gil_scoped_release release;
        return s.loop().advance();
      }, "Runs one MPC period; False once finished.")
      .def("apply", [](PySession& s, const py::dict& command) {
        s.loop().apply(commandFromJson(toJson(command)));
      }, py::arg("command"))
      .def("frame", [](PySession& s, const std::string& session_id) {
        FrameOptions opts;
        opts.session_id = session_id;
        return fromJson(buildFrame(s.loop(), s.next_seq++, opts));
      }, py::arg("session_id") = "local")
      .def_property_readonly("time", [](PySession& s) { return s.loop().time(); })
      .def_property_readonly("finished", [](PySession& s) { return s.loop().finished(); })
      .def_property_readonly("goal_reached", [](PySession& s) { return s.loop().goalReached(); })
      .def_property_readonly("state", [](PySession& s) { return s.loop().state(); });

  m.def("encode_message", [](const py::object& message) {
    return py::bytes(encodeMessage(toJson(message)));
  }, py::arg("message"), "Length-delimited stream encoding of one JSON message.");

  py::class_<Service>(m, "Service")
      .def(py::init([](const std::string& host, int port, double pace) {
        ServiceOptions o;
        o.host = host;
        o.port = port;
        o.pace = pace;
        o.stream_poll_ms = 200;
        return std::make_unique<Service>(o);
      }), py::arg("host") = "127.0.0.1", py::arg("port") = 0, py::arg("pace") = 1.0)
      .def("start", &Service::start, "Serves on a background thread; returns the bound port.")
      .def("stop", &Service::stop, py::call_guard<py::gil_scoped_release>());
}
