#pragma once

#include "cosnet/errors.hpp"
#include "cosnet/tensor.hpp"
#include "cosnet/ops.hpp"
#include "cosnet/graph.hpp"
#include "cosnet/autodiff.hpp"
#include "cosnet/arch.hpp"
#include "cosnet/analyzer.hpp"
#include "cosnet/runtime.hpp"
#include "cosnet/trainer.hpp"
