#pragma once

// Core library: measures, pre-conditioners, metrics, transport, learning,
// recovery and adaptation.

#include "mprecon/adaptation.hpp"
#include "mprecon/error.hpp"
#include "mprecon/kernel.hpp"
#include "mprecon/learning.hpp"
#include "mprecon/lp.hpp"
#include "mprecon/measure.hpp"
#include "mprecon/metrics.hpp"
#include "mprecon/preconditioners.hpp"
#include "mprecon/recovery.hpp"
#include "mprecon/rng.hpp"
#include "mprecon/transport.hpp"
