#pragma once

// Encoder, context allocation, the two task heads, domain alignment losses,
// model composition and saved models.

#include "difd/model/ad_head.hpp"
#include "difd/model/allocation.hpp"
#include "difd/model/asc_head.hpp"
#include "difd/model/domain_align.hpp"
#include "difd/model/encoder.hpp"
#include "difd/model/model.hpp"
#include "difd/model/saved.hpp"
