#pragma once

// Convenience header pulling in every module.

#include "throttle/errors.hpp"
#include "throttle/population.hpp"
#include "throttle/allocation.hpp"
#include "throttle/regret.hpp"
#include "throttle/stream_optimizer.hpp"
#include "throttle/download_optimizer.hpp"
#include "throttle/tier_game.hpp"
#include "throttle/cycle_sim.hpp"
