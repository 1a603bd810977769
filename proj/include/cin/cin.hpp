// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cin/coattn.hpp"
#include "cin/coconv.hpp"
#include "cin/cograph.hpp"
#include "cin/compose.hpp"
#include "cin/conorm.hpp"
#include "cin/copool.hpp"
#include "cin/cost.hpp"
#include "cin/error.hpp"
#include "cin/layers.hpp"
#include "cin/module.hpp"
#include "cin/random.hpp"
#include "cin/tensor.hpp"
