#pragma once

// Umbrella header for the VL-BEiT-style desk-scale pretraining stack.

#include "vlbt/checkpoint.hpp"
#include "vlbt/codebook.hpp"
#include "vlbt/config.hpp"
#include "vlbt/errors.hpp"
#include "vlbt/finetune.hpp"
#include "vlbt/grad_check.hpp"
#include "vlbt/image.hpp"
#include "vlbt/masking.hpp"
#include "vlbt/model.hpp"
#include "vlbt/optim.hpp"
#include "vlbt/pretrain.hpp"
#include "vlbt/rng.hpp"
#include "vlbt/runner.hpp"
#include "vlbt/synth.hpp"
#include "vlbt/tensor.hpp"
#include "vlbt/text.hpp"
