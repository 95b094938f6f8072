// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "vaff/common.hpp"

namespace vaff {

/// Cosine annealing to zero: lr(e) = lr0 * (1 + cos(pi * e / E)) / 2.
inline double cosine_lr(double lr_initial, int epoch, int total_epochs) {
    if (total_epochs < 1) throw Error("config error: total_epochs must be >= 1");
    if (epoch < 0) epoch = 0;
    if (epoch >= total_epochs) return 0.0;
    return lr_initial * (1.0 + std::cos(M_PI * double(epoch) / double(total_epochs))) / 2.0;
}

} // namespace vaff
