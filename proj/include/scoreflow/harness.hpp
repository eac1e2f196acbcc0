#pragma once

#include "scoreflow/harness/config.hpp"
#include "scoreflow/harness/metrics.hpp"
#include "scoreflow/harness/report.hpp"
#include "scoreflow/harness/run.hpp"
