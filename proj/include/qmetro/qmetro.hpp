#pragma once

#include "qmetro/dataset.hpp"
#include "qmetro/error.hpp"
#include "qmetro/estimator.hpp"
#include "qmetro/experiment.hpp"
#include "qmetro/grid.hpp"
#include "qmetro/models.hpp"
#include "qmetro/neural.hpp"
#include "qmetro/parallel.hpp"
#include "qmetro/policy.hpp"
#include "qmetro/prob_table.hpp"
#include "qmetro/random.hpp"
