#pragma once

#include "saferl/harness/config.hpp"
#include "saferl/harness/experiment.hpp"
