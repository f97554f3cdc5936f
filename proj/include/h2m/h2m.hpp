#pragma once

#include "h2m/error.hpp"
#include "h2m/rng.hpp"
#include "h2m/dataset.hpp"
#include "h2m/splines.hpp"
#include "h2m/pollutant.hpp"
#include "h2m/health.hpp"
#include "h2m/mcmc/config.hpp"
#include "h2m/mcmc/kernels.hpp"
#include "h2m/mcmc/model.hpp"
#include "h2m/mcmc/draws.hpp"
#include "h2m/mcmc/sampler.hpp"
#include "h2m/diagnostics.hpp"
#include "h2m/simulation.hpp"
