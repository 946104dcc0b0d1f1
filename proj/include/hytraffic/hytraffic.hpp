/// @file hytraffic.hpp
/// @brief Everything in one include.
#pragma once

#include "error.hpp"
#include "network/network.hpp"
#include "network/validate.hpp"
#include "network/routing.hpp"
#include "network/scenario_io.hpp"
#include "micro/idm.hpp"
#include "micro/mobil.hpp"
#include "micro/vehicle.hpp"
#include "micro/behavior.hpp"
#include "micro/perception.hpp"
#include "macro/ctm.hpp"
#include "hybrid/cluster.hpp"
#include "hybrid/topology.hpp"
#include "hybrid/coupling.hpp"
#include "lod/controller.hpp"
#include "gen/generator.hpp"
#include "engine/model.hpp"
#include "engine/probe.hpp"
#include "engine/engine.hpp"
#include "io/records.hpp"
#include "io/writers.hpp"
