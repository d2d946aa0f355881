#ifndef EPITR_EPITR_HPP
#define EPITR_EPITR_HPP

#include "epitr/common.hpp"
#include "epitr/geometry.hpp"
#include "epitr/sampler.hpp"
#include "epitr/fusion.hpp"
#include "epitr/triangulation.hpp"
#include "epitr/metrics.hpp"
#include "epitr/synth.hpp"
#include "epitr/pipeline.hpp"

#endif  // EPITR_EPITR_HPP
