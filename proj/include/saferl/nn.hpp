#pragma once

#include "saferl/core/adam.hpp"
#include "saferl/core/checkpoint.hpp"
#include "saferl/core/errors.hpp"
#include "saferl/core/format.hpp"
#include "saferl/core/grad_check.hpp"
#include "saferl/core/param_store.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/core/tape.hpp"
#include "saferl/core/tensor.hpp"
