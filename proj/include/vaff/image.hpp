// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "vaff/common.hpp"

namespace vaff {

/// Dense row-major 2D image. Pixel access is (y, x).
template <class T>
class Image {
public:
    Image() = default;
    Image(int height, int width, T fill = T{})
        : h_(height), w_(width), px_(std::size_t(height) * std::size_t(width), fill) {
        if (height < 0 || width < 0) throw Error("geometry error: negative image size");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t size() const { return px_.size(); }
    bool empty() const { return px_.empty(); }

    T& operator()(int y, int x) { return px_[std::size_t(y) * w_ + x]; }
    const T& operator()(int y, int x) const { return px_[std::size_t(y) * w_ + x]; }
    bool in_bounds(int y, int x) const { return y >= 0 && y < h_ && x >= 0 && x < w_; }

    T* data() { return px_.data(); }
    const T* data() const { return px_.data(); }
    std::vector<T>& pixels() { return px_; }
    const std::vector<T>& pixels() const { return px_; }

    bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_; }
    friend bool operator==(const Image& a, const Image& b) {
        return a.h_ == b.h_ && a.w_ == b.w_ && a.px_ == b.px_;
    }

private:
    int h_ = 0, w_ = 0;
    std::vector<T> px_;
};

using FloatImage = Image<float>;
/// Binary mask, values restricted to {0, 1}.
using Mask = Image<std::uint8_t>;

inline bool is_binary(const Mask& m) {
    return std::all_of(m.pixels().begin(), m.pixels().end(),
                       [](std::uint8_t v) { return v <= 1; });
}

inline std::size_t count_nonzero(const Mask& m) {
    return std::size_t(std::count_if(m.pixels().begin(), m.pixels().end(),
                                     [](std::uint8_t v) { return v != 0; }));
}

} // namespace vaff
