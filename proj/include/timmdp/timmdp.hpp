#pragma once

#include "baselines.hpp"
#include "crg.hpp"
#include "domains.hpp"
#include "errors.hpp"
#include "formats.hpp"
#include "model.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "search.hpp"
