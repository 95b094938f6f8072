// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vaff/codec/codec.hpp"
#include "vaff/image.hpp"

namespace vaff {

/// Per-sample forward result at input resolution; all values are sigmoid
/// outputs in (0,1).
struct NetworkOutput {
    FloatImage rv_prob;
    FloatImage faz_prob;
    FloatImage rvj_heatmap;
    GridTarget rvj_grid;
};

} // namespace vaff
