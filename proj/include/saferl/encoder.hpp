#pragma once

#include "saferl/encoder/config.hpp"
#include "saferl/encoder/embed.hpp"
#include "saferl/encoder/gtrxl.hpp"
#include "saferl/encoder/positional.hpp"
