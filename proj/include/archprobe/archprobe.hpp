#pragma once

#include "archprobe/analysis.hpp"
#include "archprobe/backend.hpp"
#include "archprobe/chase.hpp"
#include "archprobe/coherency.hpp"
#include "archprobe/error.hpp"
#include "archprobe/kernel_types.hpp"
#include "archprobe/kernels.hpp"
#include "archprobe/keyvalue.hpp"
#include "archprobe/live_backend.hpp"
#include "archprobe/report.hpp"
#include "archprobe/suite.hpp"
#include "archprobe/synthetic_backend.hpp"
#include "archprobe/synthmodel.hpp"
#include "archprobe/timekit.hpp"
#include "archprobe/topo.hpp"
