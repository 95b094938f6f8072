// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "vaff/data/types.hpp"

namespace vaff {

/// One concrete draw from AugmentParams. The geometric part is
/// rotation-after-flips about the image center.
struct SampledTransform {
    bool hflip = false;
    bool vflip = false;
    double angle_deg = 0.0;
    double gamma = 1.0;

    bool is_geometric_identity() const {
        return !hflip && !vflip && angle_deg == 0.0;
    }
};

inline SampledTransform sample_transform(const AugmentParams& p, Rng& rng) {
    SampledTransform t;
    t.hflip = rng.bernoulli(p.hflip_prob);
    t.vflip = rng.bernoulli(p.vflip_prob);
    t.angle_deg = rng.uniform(p.rotation_range_deg[0], p.rotation_range_deg[1]);
    t.gamma = rng.uniform(p.gamma_range[0], p.gamma_range[1]);
    return t;
}

namespace detail {

struct PointMap {
    double cx, cy, cos_t, sin_t;
    bool hflip, vflip;
    int w, h;

    /// Forward map: flips, then rotation about the center.
    std::pair<double, double> forward(double x, double y) const {
        if (hflip) x = double(w - 1) - x;
        if (vflip) y = double(h - 1) - y;
        const double dx = x - cx, dy = y - cy;
        return {cx + cos_t * dx - sin_t * dy, cy + sin_t * dx + cos_t * dy};
    }
    /// Inverse map: rotation by -angle, then flips.
    std::pair<double, double> inverse(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        double sx = cx + cos_t * dx + sin_t * dy;
        double sy = cy - sin_t * dx + cos_t * dy;
        if (hflip) sx = double(w - 1) - sx;
        if (vflip) sy = double(h - 1) - sy;
        return {sx, sy};
    }
};

inline PointMap make_point_map(const SampledTransform& t, int h, int w) {
    const double rad = t.angle_deg * M_PI / 180.0;
    return PointMap{(w - 1) / 2.0, (h - 1) / 2.0, std::cos(rad), std::sin(rad),
                    t.hflip, t.vflip, w, h};
}

inline FloatImage warp_bilinear(const FloatImage& img, const PointMap& m) {
    FloatImage out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const auto [sx, sy] = m.inverse(double(x), double(y));
            if (sx < 0.0 || sy < 0.0 || sx > double(img.width() - 1) ||
                sy > double(img.height() - 1))
                continue; // out-of-frame fill 0
            const int x0 = int(sx), y0 = int(sy);
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const int y1 = std::min(y0 + 1, img.height() - 1);
            const float fx = float(sx - x0), fy = float(sy - y0);
            const float top = img(y0, x0) + (img(y0, x1) - img(y0, x0)) * fx;
            const float bot = img(y1, x0) + (img(y1, x1) - img(y1, x0)) * fx;
            out(y, x) = top + (bot - top) * fy;
        }
    return out;
}

inline Mask warp_nearest(const Mask& mask, const PointMap& m) {
    Mask out(mask.height(), mask.width());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            const auto [sx, sy] = m.inverse(double(x), double(y));
            const int nx = int(std::lround(sx)), ny = int(std::lround(sy));
            if (mask.in_bounds(ny, nx)) out(y, x) = mask(ny, nx) >= 1 ? 1 : 0;
        }
    return out;
}

} // namespace detail

/// Maps a junction coordinate through the transform; returns false when the
/// result leaves the frame or lands within 2 px of the border (its Gaussian
/// support would be truncated).
inline bool transform_junction(const SampledTransform& t, int h, int w, const Junction& in,
                               Junction& out) {
    const auto m = detail::make_point_map(t, h, w);
    const auto [fx, fy] = m.forward(double(in.x), double(in.y));
    const int x = int(std::lround(fx)), y = int(std::lround(fy));
    if (x < 2 || y < 2 || x > w - 3 || y > h - 3) return false;
    out = Junction{x, y, in.kind};
    return true;
}

/// Applies one sampled transform to a whole Sample: identical geometry for
/// images (bilinear), masks (nearest, re-binarized) and junctions; gamma on
/// images only.
inline Sample apply_transform(const Sample& s, const SampledTransform& t) {
    if (!s.triplet.consistent() || !s.annotations.vessel_mask.same_shape(s.annotations.faz_mask))
        throw Error("geometry error: inconsistent sample");
    Sample out;
    out.id = s.id;
    const int h = s.triplet.height(), w = s.triplet.width();

    if (t.is_geometric_identity()) {
        out.triplet = s.triplet;
        out.annotations = s.annotations;
    } else {
        const auto m = detail::make_point_map(t, h, w);
        out.triplet.ivc = detail::warp_bilinear(s.triplet.ivc, m);
        out.triplet.svc = detail::warp_bilinear(s.triplet.svc, m);
        out.triplet.dvc = detail::warp_bilinear(s.triplet.dvc, m);
        out.annotations.vessel_mask = detail::warp_nearest(s.annotations.vessel_mask, m);
        out.annotations.faz_mask = detail::warp_nearest(s.annotations.faz_mask, m);
        for (const auto& j : s.annotations.junctions) {
            Junction mapped;
            if (transform_junction(t, h, w, j, mapped)) out.annotations.junctions.push_back(mapped);
        }
    }

    if (t.gamma != 1.0) {
        const float g = float(t.gamma);
        auto apply_gamma = [g](FloatImage& img) {
            for (auto& v : img.pixels()) v = std::pow(std::clamp(v, 0.0f, 1.0f), g);
        };
        apply_gamma(out.triplet.ivc);
        apply_gamma(out.triplet.svc);
        apply_gamma(out.triplet.dvc);
    }
    return out;
}

inline Sample augment(const Sample& s, const AugmentParams& p, Rng& rng) {
    return apply_transform(s, sample_transform(p, rng));
}

} // namespace vaff
