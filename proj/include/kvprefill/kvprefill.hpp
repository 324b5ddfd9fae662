#pragma once

// Umbrella header: the whole library in dependency order.

#include "kvprefill/errors.hpp"
#include "kvprefill/rng.hpp"
#include "kvprefill/matrix.hpp"
#include "kvprefill/config.hpp"
#include "kvprefill/weights.hpp"
#include "kvprefill/kv_cache.hpp"
#include "kvprefill/model.hpp"
#include "kvprefill/partition.hpp"
#include "kvprefill/search.hpp"
#include "kvprefill/lookup_table.hpp"
#include "kvprefill/channel.hpp"
#include "kvprefill/engine.hpp"
#include "kvprefill/oracle.hpp"
#include "kvprefill/simnet.hpp"
#include "kvprefill/commands.hpp"
