#pragma once

#include "uir/checkpoint.hpp"
#include "uir/common.hpp"
#include "uir/data.hpp"
#include "uir/eval.hpp"
#include "uir/filter.hpp"
#include "uir/gradcheck.hpp"
#include "uir/losses.hpp"
#include "uir/model.hpp"
#include "uir/numerics.hpp"
#include "uir/parallel.hpp"
#include "uir/rng.hpp"
#include "uir/trainer.hpp"
