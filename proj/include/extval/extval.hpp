#pragma once

// Umbrella header for the whole library.

#include "extval/csv.hpp"
#include "extval/datagen.hpp"
#include "extval/distance.hpp"
#include "extval/distribution.hpp"
#include "extval/error.hpp"
#include "extval/estimators.hpp"
#include "extval/eta_solver.hpp"
#include "extval/geometry.hpp"
#include "extval/lp.hpp"
#include "extval/model.hpp"
#include "extval/oracle.hpp"
#include "extval/robust.hpp"
#include "extval/search.hpp"
