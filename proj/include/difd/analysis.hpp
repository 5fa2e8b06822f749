#pragma once

#include "difd/analysis/evaluate.hpp"
#include "difd/analysis/metrics.hpp"
#include "difd/analysis/probe.hpp"
