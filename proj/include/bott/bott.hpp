#pragma once

#include "bott/autodiff.hpp"
#include "bott/baseline.hpp"
#include "bott/featurizer.hpp"
#include "bott/gating.hpp"
#include "bott/geometry.hpp"
#include "bott/hungarian.hpp"
#include "bott/loss.hpp"
#include "bott/metrics.hpp"
#include "bott/network.hpp"
#include "bott/offline_tracker.hpp"
#include "bott/online_tracker.hpp"
#include "bott/parallel.hpp"
#include "bott/scene_io.hpp"
#include "bott/synth.hpp"
#include "bott/trackdb.hpp"
#include "bott/trainer.hpp"
#include "bott/types.hpp"
