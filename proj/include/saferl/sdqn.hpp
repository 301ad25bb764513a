#pragma once

#include "saferl/sdqn/heads.hpp"
#include "saferl/sdqn/replay.hpp"
#include "saferl/sdqn/safe_lp.hpp"
#include "saferl/sdqn/trainer.hpp"
