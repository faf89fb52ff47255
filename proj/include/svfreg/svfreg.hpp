#pragma once

#include "svfreg/errors.hpp"
#include "svfreg/grid.hpp"
#include "svfreg/integrate.hpp"
#include "svfreg/io.hpp"
#include "svfreg/loss.hpp"
#include "svfreg/metrics.hpp"
#include "svfreg/optimize.hpp"
#include "svfreg/prob_model.hpp"
#include "svfreg/surface.hpp"
#include "svfreg/synth.hpp"
#include "svfreg/transform.hpp"
