#pragma once

#include "pnode/adapt.hpp"
#include "pnode/calibrate.hpp"
#include "pnode/config.hpp"
#include "pnode/diffusion.hpp"
#include "pnode/error.hpp"
#include "pnode/init.hpp"
#include "pnode/linearize.hpp"
#include "pnode/prior.hpp"
#include "pnode/problem.hpp"
#include "pnode/problems.hpp"
#include "pnode/solver.hpp"
#include "pnode/state.hpp"
#include "pnode/stepper.hpp"
#include "pnode/structmat.hpp"
