#pragma once

// Streaming-attention memory engine: bounded K/V memories with pluggable
// eviction policies, the wait-to-attend layer built on them, stacked and
// encoder-decoder compositions, and the synthetic benchmark plumbing.

#include "attendre/common.hpp"
#include "attendre/config_file.hpp"
#include "attendre/encdec.hpp"
#include "attendre/kernels.hpp"
#include "attendre/layer.hpp"
#include "attendre/matrix.hpp"
#include "attendre/memory.hpp"
#include "attendre/oracle.hpp"
#include "attendre/policy.hpp"
#include "attendre/position.hpp"
#include "attendre/rng.hpp"
#include "attendre/stack.hpp"
#include "attendre/sweep.hpp"
#include "attendre/task.hpp"
