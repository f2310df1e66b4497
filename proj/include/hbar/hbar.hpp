#pragma once

#include "hbar/constants.hpp"
#include "hbar/cqad_metrics.hpp"
#include "hbar/digamma.hpp"
#include "hbar/error.hpp"
#include "hbar/loss_budget.hpp"
#include "hbar/optim.hpp"
#include "hbar/participation.hpp"
#include "hbar/resonance_fit.hpp"
#include "hbar/stability.hpp"
#include "hbar/stack_fit.hpp"
#include "hbar/stack_model.hpp"
#include "hbar/tls.hpp"
