#pragma once

#include <bezgraph/sim.hpp>

#include <cstdint>
#include <string>

namespace bezgraph
{
/// 10 m x 10 m planar scene, |v| <= 2 m/s, |u| <= 4 m/s^2, 1 s graph
/// segments, 0.1 s MPC steps, rates 2 / 10 / 100 Hz. No obstacles.
Scenario deskScenario();

/// Desk scene with six fixed boxes for interactive sessions: the loop keeps
/// running after the goal is reached so obstacles and the goal can be moved.
Scenario demoScenario();

/// Start near (1, 1), goal near (9, 9), `obstacles` random boxes that keep
/// the start and goal clear.
Scenario randomFieldScenario(std::uint64_t seed, int obstacles = 20, int vertices = 1000);

/// One box between start and goal placed so the straight line is blocked
/// and the graph path must turn a corner. Path length is weighted far above
/// tracking and the MPC horizon spans 5 s.
Scenario cornerScenario(std::uint64_t seed, int vertices = 1000);

/// 30 x 20 cell maze with 300 wall segments on a lattice graph (seven
/// velocity states per cell centre). Start and goal in opposite corners.
Scenario mazeScenario(std::uint64_t seed);

/// Desk scene with a box sliding across the straight route.
Scenario movingObstacleScenario(std::uint64_t seed);

/// Preset by name: demo, desk, field, corner, maze or moving. Throws
/// ScenarioError for an unknown name.
Scenario presetScenario(const std::string& name, std::uint64_t seed);
}  // namespace bezgraph
