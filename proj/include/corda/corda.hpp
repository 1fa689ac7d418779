#pragma once

#include "corda/checkpoint.hpp"
#include "corda/datasets.hpp"
#include "corda/experiment.hpp"
#include "corda/image_io.hpp"
#include "corda/losses.hpp"
#include "corda/metrics.hpp"
#include "corda/model.hpp"
#include "corda/nn.hpp"
#include "corda/refinement.hpp"
#include "corda/selftrain.hpp"
#include "corda/tensor.hpp"
