#pragma once

#include "windfc/autodiff.hpp"
#include "windfc/checkpoint.hpp"
#include "windfc/data.hpp"
#include "windfc/eval.hpp"
#include "windfc/graph.hpp"
#include "windfc/model.hpp"
#include "windfc/tensor.hpp"
#include "windfc/training.hpp"
