// Umbrella header.
#pragma once

#include "mowe/common.hpp"
#include "mowe/tensor.hpp"
#include "mowe/ops.hpp"
#include "mowe/gradcheck.hpp"
#include "mowe/image.hpp"
#include "mowe/weather.hpp"
#include "mowe/metrics.hpp"
#include "mowe/model.hpp"
#include "mowe/checkpoint.hpp"
#include "mowe/optim.hpp"
#include "mowe/recognition.hpp"
#include "mowe/train.hpp"
#include "mowe/eval.hpp"
#include "mowe/config.hpp"
