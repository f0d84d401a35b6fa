#pragma once

#include "minority/checkpoint.hpp"
#include "minority/distance.hpp"
#include "minority/elbo.hpp"
#include "minority/errors.hpp"
#include "minority/gmm.hpp"
#include "minority/guidance.hpp"
#include "minority/metric.hpp"
#include "minority/mlp.hpp"
#include "minority/neighbors.hpp"
#include "minority/rng.hpp"
#include "minority/sampler.hpp"
#include "minority/schedule.hpp"
#include "minority/score_model.hpp"
#include "minority/stats.hpp"
