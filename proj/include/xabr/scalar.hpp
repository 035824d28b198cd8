#pragma once

#include <cstdint>

namespace xabr {

#ifdef XABR_DOUBLE
using Scalar = double;
inline constexpr bool kDoubleEngine = true;
#else
using Scalar = float;
inline constexpr bool kDoubleEngine = false;
#endif

// Reductions (dot products, means, variances) always accumulate in f64.
using Accum = double;

}  // namespace xabr
