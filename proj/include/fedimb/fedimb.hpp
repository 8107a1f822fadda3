#pragma once

#include "fedimb/battery.hpp"
#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/flcore/algorithms.hpp"
#include "fedimb/flcore/model.hpp"
#include "fedimb/flcore/server.hpp"
#include "fedimb/flcore/training.hpp"
#include "fedimb/imbalance.hpp"
#include "fedimb/partition.hpp"
#include "fedimb/runner/config.hpp"
#include "fedimb/runner/csv.hpp"
#include "fedimb/runner/experiment.hpp"
