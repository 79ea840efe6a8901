#pragma once

#include "mvsum/errors.hpp"
#include "mvsum/evaluation.hpp"
#include "mvsum/families.hpp"
#include "mvsum/rng.hpp"
#include "mvsum/sampler.hpp"
#include "mvsum/series_space.hpp"
#include "mvsum/simulator.hpp"
#include "mvsum/trace.hpp"
