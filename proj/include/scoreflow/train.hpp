#pragma once

#include "scoreflow/train/loop.hpp"
#include "scoreflow/train/mlp.hpp"
#include "scoreflow/train/objective.hpp"
#include "scoreflow/train/optim.hpp"
#include "scoreflow/train/tape.hpp"
