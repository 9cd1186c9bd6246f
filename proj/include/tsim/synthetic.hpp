#pragma once

#include <cstdint>
#include <string>

#include "tsim/scenario.hpp"

namespace tsim {

enum class ScenarioTemplate { straight, curve, intersection };

ScenarioTemplate parse_template(const std::string& name);
std::string template_name(ScenarioTemplate t);

// Deterministic in seed. Road graph from the template; agents spawned without
// box overlaps on lane centerlines; tracks rolled with noisy IDM longitudinal
// control plus pure-pursuit lane following at dt = 0.1 s; whole spawns are
// resampled (bounded retries) until the logged tracks are collision-free and
// on-road; goals default to the final track positions.
Scenario generate_synthetic_scenario(ScenarioTemplate tmpl, int n_agents,
                                     std::uint64_t seed);

}  // namespace tsim
