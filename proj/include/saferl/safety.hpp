#pragma once

#include "saferl/safety/ensemble.hpp"
