#pragma once

// Umbrella header: frozen image transformer extended to video with
// landmark-guided prompts, temporal adapters and anchor-based
// self-distillation, plus the training/eval harness around it.

#include "s2d/ablate.hpp"
#include "s2d/backbone.hpp"
#include "s2d/checkpoint.hpp"
#include "s2d/config.hpp"
#include "s2d/datagen.hpp"
#include "s2d/distill.hpp"
#include "s2d/eval.hpp"
#include "s2d/gradcheck.hpp"
#include "s2d/graph.hpp"
#include "s2d/metrics.hpp"
#include "s2d/model.hpp"
#include "s2d/ops.hpp"
#include "s2d/optim.hpp"
#include "s2d/params.hpp"
#include "s2d/prompter.hpp"
#include "s2d/rng.hpp"
#include "s2d/temporal_adapter.hpp"
#include "s2d/tensor.hpp"
#include "s2d/tensor_io.hpp"
#include "s2d/train.hpp"
