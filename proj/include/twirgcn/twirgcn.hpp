#pragma once

// Everything: model, training, evaluation, ablation and the toy generator.

#include "twirgcn/ablation.hpp"
#include "twirgcn/encoders.hpp"
#include "twirgcn/evaluator.hpp"
#include "twirgcn/grad_check.hpp"
#include "twirgcn/io.hpp"
#include "twirgcn/kg.hpp"
#include "twirgcn/model.hpp"
#include "twirgcn/optim.hpp"
#include "twirgcn/synthgen.hpp"
#include "twirgcn/tensor.hpp"
#include "twirgcn/trainer.hpp"
