#pragma once

#include "malkit/attribution.hpp"
#include "malkit/autograd.hpp"
#include "malkit/checkpoint.hpp"
#include "malkit/config.hpp"
#include "malkit/datagen.hpp"
#include "malkit/dataset.hpp"
#include "malkit/errors.hpp"
#include "malkit/experiment.hpp"
#include "malkit/hashing.hpp"
#include "malkit/layers.hpp"
#include "malkit/metrics.hpp"
#include "malkit/models.hpp"
#include "malkit/params.hpp"
#include "malkit/tensor.hpp"
#include "malkit/training.hpp"
