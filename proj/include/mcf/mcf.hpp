// Umbrella header.
#pragma once

#include "mcf/aggregation.hpp"
#include "mcf/centering.hpp"
#include "mcf/common.hpp"
#include "mcf/config.hpp"
#include "mcf/criteria.hpp"
#include "mcf/dataset.hpp"
#include "mcf/diagnostics.hpp"
#include "mcf/emcs.hpp"
#include "mcf/forest.hpp"
#include "mcf/inference.hpp"
#include "mcf/matching.hpp"
#include "mcf/regression.hpp"
#include "mcf/serialize.hpp"
#include "mcf/stats.hpp"
#include "mcf/tree.hpp"
