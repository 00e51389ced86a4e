#pragma once

#include "a2m/autodiff.hpp"
#include "a2m/episodes.hpp"
#include "a2m/errors.hpp"
#include "a2m/harness/checkpoint.hpp"
#include "a2m/harness/config.hpp"
#include "a2m/harness/experiment.hpp"
#include "a2m/harness/results.hpp"
#include "a2m/inner_algorithms.hpp"
#include "a2m/meta_training.hpp"
#include "a2m/networks.hpp"
#include "a2m/optimizer.hpp"
#include "a2m/rng.hpp"
