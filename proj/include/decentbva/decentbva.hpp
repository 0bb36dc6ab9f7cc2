#pragma once

// Umbrella header: the whole library in one include.

#include "decentbva/arch.hpp"
#include "decentbva/attack.hpp"
#include "decentbva/bias_variance.hpp"
#include "decentbva/config.hpp"
#include "decentbva/dataset.hpp"
#include "decentbva/error.hpp"
#include "decentbva/federation.hpp"
#include "decentbva/harness.hpp"
#include "decentbva/metrics.hpp"
#include "decentbva/model.hpp"
#include "decentbva/network.hpp"
#include "decentbva/parallel.hpp"
#include "decentbva/rng.hpp"
#include "decentbva/tensor.hpp"
