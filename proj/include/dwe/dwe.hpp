#pragma once

#include "dwe/checkpoint.hpp"
#include "dwe/config.hpp"
#include "dwe/dataset.hpp"
#include "dwe/encoders.hpp"
#include "dwe/enhancer.hpp"
#include "dwe/errors.hpp"
#include "dwe/evaluate.hpp"
#include "dwe/grad_check.hpp"
#include "dwe/model.hpp"
#include "dwe/model_gradcheck.hpp"
#include "dwe/objective.hpp"
#include "dwe/ops.hpp"
#include "dwe/param_store.hpp"
#include "dwe/retrieval.hpp"
#include "dwe/synth.hpp"
#include "dwe/tensor.hpp"
#include "dwe/train.hpp"
