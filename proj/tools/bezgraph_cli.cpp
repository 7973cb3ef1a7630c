#include <bezgraph/generators.hpp>
#include <bezgraph/scenario.hpp>
#include <bezgraph/service.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

using namespace bezgraph;

namespace
{
struct ScenarioArgs
{
  std::string file;
  std::string preset = "demo";
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> graph_seed;
  std::optional<std::uint64_t> disturbance_seed;
  std::optional<int> N;
  std::optional<double> T;
  std::optional<double> cut_hz;
  std::optional<double> mpc_hz;
  std::optional<double> sim_hz;
  std::optional<int> horizon;
  std::optional<double> timeout;
  std::optional<int> obstacles;
};

void addScenarioOptions(CLI::App* app, ScenarioArgs& a)
{
  app->add_option("-s,--scenario", a.file, "Scenario JSON file");
  app->add_option("-p,--preset", a.preset, "Built-in scenario when no file is given")
      ->check(CLI::IsMember({"demo", "desk", "field", "corner", "maze", "moving"}));
  app->add_option("--seed", a.seed, "Seed for preset generation");
  app->add_option("--graph-seed", a.graph_seed, "Vertex sampling seed");
  app->add_option("--disturbance-seed", a.disturbance_seed, "Disturbance seed");
  app->add_option("-N,--vertices", a.N, "Number of sampled graph vertices");
  app->add_option("-T,--segment", a.T, "Graph segment duration [s]");
  app->add_option("--cut-hz", a.cut_hz, "Graph cut rate");
  app->add_option("--mpc-hz", a.mpc_hz, "MPC rate");
  app->add_option("--sim-hz", a.sim_hz, "Simulation rate");
  app->add_option("--horizon", a.horizon, "MPC horizon steps");
  app->add_option("--timeout", a.timeout, "Simulated time limit [s]");
  app->add_option("--obstacles", a.obstacles, "Obstacle count for the field preset");
}

Scenario resolve(const ScenarioArgs& a)
{
  Scenario s;
  if (!a.file.empty())
  {
    s = loadScenario(a.file);
  }
  else if (a.preset == "demo")
  {
    s = demoScenario();
  }
  else if (a.preset == "desk")
  {
    s = deskScenario();
  }
  else if (a.preset == "field")
  {
    s = randomFieldScenario(a.seed, a.obstacles.value_or(20));
  }
  else if (a.preset == "corner")
  {
    s = cornerScenario(a.seed);
  }
  else if (a.preset == "maze")
  {
    s = mazeScenario(a.seed);
  }
  else
  {
    s = movingObstacleScenario(a.seed);
  }
  if (a.graph_seed) s.graph.seed = *a.graph_seed;
  if (a.disturbance_seed) s.sim.disturbance_seed = *a.disturbance_seed;
  if (a.N) s.graph.N = *a.N;
  if (a.T)
  {
    s.graph.T = *a.T;
    s.spec = s.spec.withDuration(*a.T);
  }
  if (a.cut_hz) s.rates.cut_hz = *a.cut_hz;
  if (a.mpc_hz) s.rates.mpc_hz = *a.mpc_hz;
  if (a.sim_hz) s.rates.sim_hz = *a.sim_hz;
  if (a.horizon) s.mpc.horizon = *a.horizon;
  if (a.timeout) s.sim.timeout = *a.timeout;
  s.validate();
  return s;
}

void writeJson(const Json& doc, const std::string& path)
{
  std::ofstream out(path);
  if (!out)
  {
    throw std::runtime_error("cannot write " + path);
  }
  out << doc.dump(2) << "\n";
}

double seconds(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b)
{
  return std::chrono::duration<double>(b - a).count();
}

Json statesToJson(const std::vector<Vec>& states)
{
  Json a = Json::array();
  for (const auto& x : states)
  {
    a.push_back(vecToJson(x));
  }
  return a;
}

int runPlan(const ScenarioArgs& args, const std::string& out_path, const std::string& graph_out,
            const std::string& mask_out)
{
  const Scenario s = resolve(args);
  const auto t0 = std::chrono::steady_clock::now();
  const auto graph = buildScenarioGraph(s);
  const auto t1 = std::chrono::steady_clock::now();
  const PlanResult plan = planOnce(s, *graph);
  const auto t2 = std::chrono::steady_clock::now();

  Json doc = {{"scenario", s.name},
              {"vertices", graph->numVertices()},
              {"edges", graph->numEdges()},
              {"build_seconds", seconds(t0, t1)},
              {"plan_seconds", seconds(t1, t2)},
              {"alive_edges", plan.mask.aliveCount()},
              {"cut", cutStatsToJson(plan.mask.stats)},
              {"found", plan.path.has_value()}};
  if (plan.path)
  {
    doc["path"] = {{"vertices", plan.path->vertices},
                   {"edges", plan.path->edges},
                   {"cost", plan.path->cost}};
    doc["reference"] = statesToJson(plan.reference);
  }
  if (plan.refined)
  {
    doc["refined"] = {{"states", statesToJson(plan.refined->states)},
                      {"verified", plan.refined->verified},
                      {"objective", plan.refined->objective},
                      {"status", qp::name(plan.refined->status)}};
  }
  if (!graph_out.empty())
  {
    writeJson(graphToJson(*graph), graph_out);
  }
  if (!mask_out.empty())
  {
    writeJson(maskToJson(plan.mask), mask_out);
  }
  if (out_path.empty() || out_path == "-")
  {
    std::cout << doc.dump(2) << "\n";
  }
  else
  {
    writeJson(doc, out_path);
    std::cout << "path " << (plan.path ? "found" : "not found") << ", " << plan.mask.aliveCount()
              << "/" << graph->numEdges() << " edges alive -> " << out_path << "\n";
  }
  return plan.path ? 0 : 2;
}

int runSimulate(const ScenarioArgs& args, const std::string& trace_path,
                const std::string& summary_path)
{
  const Scenario s = resolve(args);
  const auto t0 = std::chrono::steady_clock::now();
  const ClosedLoopTrace trace = runClosedLoop(s);
  const auto t1 = std::chrono::steady_clock::now();
  if (!trace_path.empty())
  {
    std::ofstream out(trace_path);
    if (!out)
    {
      throw std::runtime_error("cannot write " + trace_path);
    }
    writeTraceJsonLines(trace, out);
  }
  Json summary = traceSummaryToJson(trace);
  summary["scenario"] = s.name;
  summary["wall_seconds"] = seconds(t0, t1);
  if (summary_path.empty() || summary_path == "-")
  {
    std::cout << summary.dump(2) << "\n";
  }
  else
  {
    writeJson(summary, summary_path);
    const auto& S = trace.summary;
    std::cout << (S.success ? "goal reached" : "goal not reached");
    if (S.goal_time)
    {
      std::cout << " at t=" << *S.goal_time << " s";
    }
    std::cout << ", collisions " << S.collisions << ", input violations " << S.input_violations
              << " -> " << summary_path << "\n";
  }
  return trace.summary.success ? 0 : 3;
}

int runBench(const ScenarioArgs& args, int repeats, int workers)
{
  if (workers > 0)
  {
    setWorkerCount(workers);
  }
  const Scenario s = resolve(args);
  const auto t0 = std::chrono::steady_clock::now();
  const auto graph = buildScenarioGraph(s);
  const auto t1 = std::chrono::steady_clock::now();
  const TrackingTube tube = s.resolvedTube();
  std::vector<Polytope> inflated;
  for (const auto& o : s.obstaclesAt(0.0))
  {
    inflated.push_back(inflate(o, tube.state_error.head(s.spec.m)).normalized());
  }
  std::vector<double> cut_times;
  CutMask mask;
  for (int r = 0; r < std::max(1, repeats); ++r)
  {
    const auto a = std::chrono::steady_clock::now();
    mask = cutGraph(*graph, inflated);
    cut_times.push_back(seconds(a, std::chrono::steady_clock::now()));
  }
  std::sort(cut_times.begin(), cut_times.end());
  const auto t2 = std::chrono::steady_clock::now();
  const ClosedLoopTrace trace = runClosedLoop(s, graph);
  const auto t3 = std::chrono::steady_clock::now();
  const double sim_time = trace.samples.empty() ? 0.0 : trace.samples.back().t;
  Json doc = {{"scenario", s.name},
              {"workers", workerCount()},
              {"vertices", graph->numVertices()},
              {"edges", graph->numEdges()},
              {"obstacles", inflated.size()},
              {"build_seconds", seconds(t0, t1)},
              {"cut_seconds_median", cut_times[cut_times.size() / 2]},
              {"cut_seconds_min", cut_times.front()},
              {"cut", cutStatsToJson(mask.stats)},
              {"closed_loop_wall_seconds", seconds(t2, t3)},
              {"closed_loop_sim_seconds", sim_time},
              {"mpc_solves", trace.summary.mpc_solves},
              {"success", trace.summary.success}};
  std::cout << doc.dump(2) << "\n";
  return 0;
}

std::atomic<bool> g_interrupted{false};

int runServe(const std::string& host, int port, double pace)
{
  ServiceOptions opts;
  opts.host = host;
  opts.port = port;
  opts.pace = pace;
  Service service(opts);
  std::signal(SIGINT, [](int) { g_interrupted.store(true); });
  std::signal(SIGTERM, [](int) { g_interrupted.store(true); });
  const int bound = service.start();
  std::cout << "serving on http://" << host << ":" << bound << "\n" << std::flush;
  while (!g_interrupted.load())
  {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  service.stop();
  return 0;
}

int runGenerate(const ScenarioArgs& args, const std::string& out_path)
{
  const Scenario s = resolve(args);
  if (out_path.empty() || out_path == "-")
  {
    std::cout << scenarioToJson(s).dump(2) << "\n";
  }
  else
  {
    saveScenario(s, out_path);
  }
  return 0;
}
}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Kinodynamic planning on a fixed graph of reachable Bezier curves"};
  app.require_subcommand(1);

  ScenarioArgs plan_args;
  std::string plan_out;
  std::string graph_out;
  std::string mask_out;
  auto* plan = app.add_subcommand("plan", "Build the graph, cut it, find and refine one path");
  addScenarioOptions(plan, plan_args);
  plan->add_option("-o,--out", plan_out, "Plan JSON output (default stdout)");
  plan->add_option("--graph-out", graph_out, "Graph JSON output");
  plan->add_option("--mask-out", mask_out, "Cut mask JSON output");

  ScenarioArgs sim_args;
  std::string trace_out;
  std::string summary_out;
  auto* sim = app.add_subcommand("simulate", "Run the closed loop to the goal or timeout");
  addScenarioOptions(sim, sim_args);
  sim->add_option("--trace", trace_out, "JSON-lines trace output");
  sim->add_option("--summary", summary_out, "Summary JSON output (default stdout)");

  ScenarioArgs bench_args;
  int repeats = 5;
  int workers = 0;
  auto* bench = app.add_subcommand("bench", "Wall-clock timing of build, cut and closed loop");
  addScenarioOptions(bench, bench_args);
  bench->add_option("--repeats", repeats, "Cut repetitions");
  bench->add_option("--workers", workers, "Worker threads (0 = hardware)");

  std::string host = "127.0.0.1";
  int port = 8080;
  double pace = 1.0;
  auto* serve = app.add_subcommand("serve", "HTTP session service");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--pace", pace, "Simulated seconds per wall second (0 = unpaced)");

  ScenarioArgs gen_args;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Write a preset scenario as JSON");
  addScenarioOptions(gen, gen_args);
  gen->add_option("-o,--out", gen_out, "Scenario JSON output (default stdout)");

  CLI11_PARSE(app, argc, argv);
  try
  {
    if (*plan) return runPlan(plan_args, plan_out, graph_out, mask_out);
    if (*sim) return runSimulate(sim_args, trace_out, summary_out);
    if (*bench) return runBench(bench_args, repeats, workers);
    if (*serve) return runServe(host, port, pace);
    if (*gen) return runGenerate(gen_args, gen_out);
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
