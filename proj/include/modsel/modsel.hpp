#pragma once

#include "modsel/baselines.hpp"
#include "modsel/environment.hpp"
#include "modsel/exp4ix.hpp"
#include "modsel/harness.hpp"
#include "modsel/learner.hpp"
#include "modsel/matrix.hpp"
#include "modsel/modcb.hpp"
#include "modsel/policy.hpp"
#include "modsel/residual.hpp"
#include "modsel/rng.hpp"
