#pragma once

// Scenario configs, runner, result records and plots. Needs nlohmann_json,
// yaml-cpp, fmt and OpenSSL.

#include "experiments/config.hpp"
#include "experiments/plot.hpp"
#include "experiments/record.hpp"
#include "experiments/runner.hpp"
#include "io.hpp"
