#pragma once

#include "swmpc/config.hpp"
#include "swmpc/errors.hpp"
#include "swmpc/integrator.hpp"
#include "swmpc/lp.hpp"
#include "swmpc/mode_plan.hpp"
#include "swmpc/model.hpp"
#include "swmpc/mpc.hpp"
#include "swmpc/ocp.hpp"
#include "swmpc/oracle.hpp"
#include "swmpc/polytope.hpp"
#include "swmpc/qp.hpp"
#include "swmpc/rounding.hpp"
#include "swmpc/srci.hpp"
#include "swmpc/trace_io.hpp"
