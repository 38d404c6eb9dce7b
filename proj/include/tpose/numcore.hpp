#pragma once

#include "tpose/numcore/adam.hpp"
#include "tpose/numcore/errors.hpp"
#include "tpose/numcore/graph.hpp"
#include "tpose/numcore/ops.hpp"
#include "tpose/numcore/params.hpp"
#include "tpose/numcore/tensor.hpp"
