#pragma once

#include "splitconf/bounds.hpp"
#include "splitconf/conformal.hpp"
#include "splitconf/coverage.hpp"
#include "splitconf/csv.hpp"
#include "splitconf/errors.hpp"
#include "splitconf/feature_map.hpp"
#include "splitconf/full_conformal.hpp"
#include "splitconf/harness.hpp"
#include "splitconf/quantile_regression.hpp"
#include "splitconf/rng.hpp"
#include "splitconf/rule_io.hpp"
#include "splitconf/scores.hpp"
#include "splitconf/simplex.hpp"
#include "splitconf/synthetic.hpp"
