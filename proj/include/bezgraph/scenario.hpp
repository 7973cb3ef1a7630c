#pragma once

#include <bezgraph/sim.hpp>

#include <json.hpp>

#include <iosfwd>
#include <string>

namespace bezgraph
{
using Json = nlohmann::json;

inline constexpr int kScenarioVersion = 1;
inline constexpr const char* kScenarioSchema = "bezgraph.scenario";

/// Parses a versioned scenario document. Errors name the offending field,
/// e.g. "obstacles[2]: A has 3 rows but b has 4".
Scenario scenarioFromJson(const Json& doc);
Json scenarioToJson(const Scenario& scenario);
Scenario loadScenario(const std::string& path);
void saveScenario(const Scenario& scenario, const std::string& path);

Json boxToJson(const Box& box);
Box boxFromJson(const Json& j, const std::string& field);
Json polytopeToJson(const Polytope& p);
/// Accepts {"A", "b"} or a box {"lo", "hi"}.
Polytope polytopeFromJson(const Json& j, const std::string& field);
Json vecToJson(const Eigen::Ref<const Vec>& v);
Vec vecFromJson(const Json& j, const std::string& field);

/// {"vertices": [[...]], "edges": [[i, j, cost], ...]}
Json graphToJson(const BezierGraph& graph);
/// Alive bitset as hex (bit e of byte e/8, least significant first) plus
/// provenance counts and cut statistics.
Json maskToJson(const CutMask& mask);
Json cutStatsToJson(const CutStats& stats);

Json traceSampleToJson(const TraceSample& s);
/// One JSON document per line, one line per sim step.
void writeTraceJsonLines(const ClosedLoopTrace& trace, std::ostream& out);
Json traceSummaryToJson(const ClosedLoopTrace& trace);
}  // namespace bezgraph
