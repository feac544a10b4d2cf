#pragma once

#include "ttsa/core.hpp"
#include "ttsa/schedules.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/stats.hpp"
#include "ttsa/noise.hpp"
#include "ttsa/odeflow.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/bounds.hpp"
#include "ttsa/verify.hpp"
#include "ttsa/config.hpp"
#include "ttsa/commands.hpp"
