#pragma once

#include "fedmem/adam.hpp"
#include "fedmem/config.hpp"
#include "fedmem/datasets.hpp"
#include "fedmem/error.hpp"
#include "fedmem/experiment.hpp"
#include "fedmem/generator.hpp"
#include "fedmem/metrics.hpp"
#include "fedmem/network.hpp"
#include "fedmem/parallel.hpp"
#include "fedmem/param_set.hpp"
#include "fedmem/partitioning.hpp"
#include "fedmem/personalization.hpp"
#include "fedmem/protocol.hpp"
#include "fedmem/report.hpp"
#include "fedmem/rng.hpp"
#include "fedmem/serialize.hpp"
#include "fedmem/tensor.hpp"
