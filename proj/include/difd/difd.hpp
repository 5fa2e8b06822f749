#pragma once

#include "difd/analysis.hpp"
#include "difd/corpus.hpp"
#include "difd/model.hpp"
#include "difd/ndgrad.hpp"
#include "difd/trainer/trainer.hpp"
#include "difd/trainer/gradcheck.hpp"
