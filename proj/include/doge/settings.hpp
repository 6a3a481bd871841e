#pragma once

#include "doge/config.hpp"
#include "doge/refiner.hpp"
#include "doge/simworld.hpp"
#include "doge/solver.hpp"

namespace doge {

/// Reads `scenario.*`, `imu.*` and `camera.*` keys over the defaults in base.
ScenarioConfig scenario_from_config(const KeyValueConfig& cfg, ScenarioConfig base = {});

/// Reads `solver.*` keys.
SolverConfig solver_from_config(const KeyValueConfig& cfg, SolverConfig base = {});

/// Reads `refiner.*`, `ieskf.*` and `window.size`; the solver block comes from
/// solver_from_config.
RefinerConfig refiner_from_config(const KeyValueConfig& cfg, RefinerConfig base = {});

/// Throws std::invalid_argument naming every key under one of the given
/// prefixes that no reader consumed.
void reject_unused(const KeyValueConfig& cfg, std::initializer_list<std::string_view> prefixes);

}  // namespace doge
