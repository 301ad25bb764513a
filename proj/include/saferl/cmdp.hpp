#pragma once

#include "saferl/cmdp/bellman.hpp"
#include "saferl/cmdp/divergence.hpp"
#include "saferl/cmdp/exact_solver.hpp"
#include "saferl/cmdp/lyapunov.hpp"
#include "saferl/cmdp/model.hpp"
