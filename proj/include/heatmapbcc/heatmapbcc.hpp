#pragma once

// Umbrella header: variational aggregation of unreliable geo-tagged
// categorical reports into posterior probability heatmaps, plus reference
// baselines, synthetic data generation and the evaluation harness.

#include "heatmapbcc/baselines.hpp"
#include "heatmapbcc/confusion.hpp"
#include "heatmapbcc/core.hpp"
#include "heatmapbcc/errors.hpp"
#include "heatmapbcc/evaluation.hpp"
#include "heatmapbcc/gpc.hpp"
#include "heatmapbcc/io.hpp"
#include "heatmapbcc/kernels.hpp"
#include "heatmapbcc/math.hpp"
#include "heatmapbcc/model.hpp"
#include "heatmapbcc/parallel.hpp"
#include "heatmapbcc/rng.hpp"
#include "heatmapbcc/synthetic.hpp"
