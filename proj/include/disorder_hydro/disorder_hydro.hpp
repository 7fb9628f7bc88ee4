#pragma once

#include "config.hpp"
#include "csv.hpp"
#include "dcoef.hpp"
#include "error.hpp"
#include "exact_gen.hpp"
#include "field.hpp"
#include "gibbs.hpp"
#include "harness.hpp"
#include "kmc.hpp"
#include "lattice.hpp"
#include "parallel.hpp"
#include "pde.hpp"
#include "renorm_current.hpp"
#include "rng.hpp"
#include "stats.hpp"
