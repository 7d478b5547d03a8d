#pragma once

// Umbrella header.

#include "fairlens/audit.hpp"
#include "fairlens/debias_ops.hpp"
#include "fairlens/embed_metrics.hpp"
#include "fairlens/error.hpp"
#include "fairlens/gentext_metrics.hpp"
#include "fairlens/gradcheck.hpp"
#include "fairlens/interchange.hpp"
#include "fairlens/loss_kernels.hpp"
#include "fairlens/numkit.hpp"
#include "fairlens/prob_metrics.hpp"
#include "fairlens/rng.hpp"
