#pragma once

#include "tweezer/units.hpp"
#include "tweezer/random.hpp"
#include "tweezer/parallel.hpp"
#include "tweezer/timeline.hpp"
#include "tweezer/power_table.hpp"
#include "tweezer/physics.hpp"
#include "tweezer/stats.hpp"
#include "tweezer/kinetics.hpp"
#include "tweezer/signal.hpp"
#include "tweezer/detect.hpp"
#include "tweezer/controller.hpp"
#include "tweezer/io.hpp"
