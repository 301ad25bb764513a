#pragma once

#include "saferl/grid/gridworld.hpp"
#include "saferl/grid/map_io.hpp"
#include "saferl/grid/to_cmdp.hpp"
