#pragma once

#include "lqmfg/compensator.hpp"
#include "lqmfg/csv.hpp"
#include "lqmfg/filter.hpp"
#include "lqmfg/meanfield.hpp"
#include "lqmfg/model.hpp"
#include "lqmfg/nash.hpp"
#include "lqmfg/population.hpp"
#include "lqmfg/portfolio.hpp"
#include "lqmfg/portfolio_params.hpp"
#include "lqmfg/riccati.hpp"
#include "lqmfg/rng.hpp"
#include "lqmfg/types.hpp"
