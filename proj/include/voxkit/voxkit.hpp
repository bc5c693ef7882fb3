#pragma once

#include "voxkit/augment.hpp"
#include "voxkit/checkpoint.hpp"
#include "voxkit/common.hpp"
#include "voxkit/config.hpp"
#include "voxkit/dataset.hpp"
#include "voxkit/experiment.hpp"
#include "voxkit/layers.hpp"
#include "voxkit/metrics.hpp"
#include "voxkit/model.hpp"
#include "voxkit/report.hpp"
#include "voxkit/rng.hpp"
#include "voxkit/tensor.hpp"
#include "voxkit/train.hpp"
#include "voxkit/tsne.hpp"
#include "voxkit/volume.hpp"
