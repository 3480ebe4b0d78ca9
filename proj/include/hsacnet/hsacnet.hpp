#pragma once

#include "hsacnet/augment.hpp"     // IWYU pragma: export
#include "hsacnet/config.hpp"      // IWYU pragma: export
#include "hsacnet/data.hpp"        // IWYU pragma: export
#include "hsacnet/encoder.hpp"     // IWYU pragma: export
#include "hsacnet/eval.hpp"        // IWYU pragma: export
#include "hsacnet/network.hpp"     // IWYU pragma: export
#include "hsacnet/pipeline.hpp"    // IWYU pragma: export
#include "hsacnet/sadam.hpp"       // IWYU pragma: export
#include "hsacnet/trainer.hpp"     // IWYU pragma: export
