// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dyncast/attention.hpp"
#include "dyncast/autodiff.hpp"
#include "dyncast/checkpoint.hpp"
#include "dyncast/dataset.hpp"
#include "dyncast/gradcheck.hpp"
#include "dyncast/metrics.hpp"
#include "dyncast/model.hpp"
#include "dyncast/multiscale.hpp"
#include "dyncast/rotary.hpp"
#include "dyncast/run_config.hpp"
#include "dyncast/tensor.hpp"
#include "dyncast/tokenizer.hpp"
#include "dyncast/training.hpp"
