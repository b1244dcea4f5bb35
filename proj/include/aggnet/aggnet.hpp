#pragma once

// Umbrella header for the aggregated-group-membership library.

#include "aggnet/dataset.hpp"
#include "aggnet/errors.hpp"
#include "aggnet/evalharness.hpp"
#include "aggnet/feature_net.hpp"
#include "aggnet/gradcheck.hpp"
#include "aggnet/hashing.hpp"
#include "aggnet/kv.hpp"
#include "aggnet/layers.hpp"
#include "aggnet/losses.hpp"
#include "aggnet/membership.hpp"
#include "aggnet/metrics.hpp"
#include "aggnet/model.hpp"
#include "aggnet/netvlad.hpp"
#include "aggnet/pooling.hpp"
#include "aggnet/rng.hpp"
#include "aggnet/scorer.hpp"
#include "aggnet/tensor.hpp"
#include "aggnet/trainer.hpp"
