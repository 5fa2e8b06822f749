#pragma once

// Dense tensors, a reverse-mode tape, parameter storage, plain SGD,
// finite-difference gradient checks and checkpoint files.

#include "difd/ndgrad/checkpoint.hpp"
#include "difd/ndgrad/gradcheck.hpp"
#include "difd/ndgrad/optim.hpp"
#include "difd/ndgrad/param_store.hpp"
#include "difd/ndgrad/tape.hpp"
#include "difd/ndgrad/tensor.hpp"
