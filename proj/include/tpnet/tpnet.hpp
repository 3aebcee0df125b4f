#pragma once

#include "tpnet/checkpoint.hpp"
#include "tpnet/config.hpp"
#include "tpnet/data.hpp"
#include "tpnet/error.hpp"
#include "tpnet/experiment.hpp"
#include "tpnet/format.hpp"
#include "tpnet/gradcheck.hpp"
#include "tpnet/resnet.hpp"
#include "tpnet/softce.hpp"
#include "tpnet/train.hpp"
#include "tpnet/turnpike.hpp"
