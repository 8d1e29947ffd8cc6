#pragma once

#include "safemon/baselines.hpp"
#include "safemon/config.hpp"
#include "safemon/conformal.hpp"
#include "safemon/datasets.hpp"
#include "safemon/errors.hpp"
#include "safemon/harness.hpp"
#include "safemon/json_io.hpp"
#include "safemon/plant.hpp"
#include "safemon/plot.hpp"
#include "safemon/predictor.hpp"
#include "safemon/seeding.hpp"
#include "safemon/session.hpp"
