#pragma once

#include "pilotwave/adequacy.hpp"
#include "pilotwave/equilibrium.hpp"
#include "pilotwave/errors.hpp"
#include "pilotwave/evolution.hpp"
#include "pilotwave/fft.hpp"
#include "pilotwave/fieldmodes.hpp"
#include "pilotwave/grids.hpp"
#include "pilotwave/guidance.hpp"
#include "pilotwave/scenarios.hpp"
#include "pilotwave/statistics.hpp"
