#pragma once

#include "icl_lab/errors.hpp"
#include "icl_lab/numerics.hpp"
#include "icl_lab/rng.hpp"
#include "icl_lab/parallel.hpp"
#include "icl_lab/datagen.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/gradients.hpp"
#include "icl_lab/probes.hpp"
#include "icl_lab/trainer.hpp"
#include "icl_lab/pruning.hpp"
#include "icl_lab/baselines.hpp"
#include "icl_lab/config.hpp"
#include "icl_lab/experiments.hpp"
