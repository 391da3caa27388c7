#pragma once

#include "usspine/annotations.hpp"
#include "usspine/augment.hpp"
#include "usspine/config.hpp"
#include "usspine/error.hpp"
#include "usspine/experiment.hpp"
#include "usspine/heatmap.hpp"
#include "usspine/metrics.hpp"
#include "usspine/nn/checkpoint.hpp"
#include "usspine/patcher.hpp"
#include "usspine/phantom.hpp"
#include "usspine/pipeline.hpp"
#include "usspine/prior.hpp"
#include "usspine/projection.hpp"
#include "usspine/rng.hpp"
#include "usspine/ssl_classifier.hpp"
#include "usspine/ssl_detector.hpp"
#include "usspine/types.hpp"
#include "usspine/volume.hpp"
