// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <fstream>

#include "vaff/data/dataset.hpp"
#include "vaff/metrics/metrics.hpp"

namespace vaff {

namespace detail {

using Rgb = std::array<std::uint8_t, 3>;

inline void blend(std::uint8_t* px, Rgb color, float alpha) {
    for (int c = 0; c < 3; ++c)
        px[c] = std::uint8_t(std::lround(px[c] * (1.0f - alpha) + color[std::size_t(c)] * alpha));
}

inline void draw_marker(std::vector<std::uint8_t>& canvas, int h, int w, int cx, int cy, Rgb color,
                        bool diagonal) {
    // plus for bifurcations, x for crossings
    for (int d = -3; d <= 3; ++d) {
        const auto put = [&](int y, int x) {
            if (y < 0 || x < 0 || y >= h || x >= w) return;
            std::uint8_t* px = canvas.data() + (std::size_t(y) * w + x) * 3;
            px[0] = color[0];
            px[1] = color[1];
            px[2] = color[2];
        };
        if (diagonal) {
            put(cy + d, cx + d);
            put(cy + d, cx - d);
        } else {
            put(cy, cx + d);
            put(cy + d, cx);
        }
    }
}

} // namespace detail

/// Composite overlay: IVC as the canvas, predicted vessels tinted blue, FAZ
/// over-segmentation green and under-segmentation red, bifurcations as yellow
/// plus markers and crossings as cyan x markers.
inline void visualize_overlay(const fs::path& sample_dir, const fs::path& pred_dir,
                              const fs::path& out_path) {
    const Sample s = load_sample(sample_dir);
    for (const char* f : {"rv_prob.png", "faz_prob.png", "junctions.json"})
        if (!fs::exists(pred_dir / f))
            throw Error(std::string("incomplete sample: missing prediction file ") + f);
    const FloatImage rv_prob = normalize(read_png_gray8((pred_dir / "rv_prob.png").string()));
    const FloatImage faz_prob = normalize(read_png_gray8((pred_dir / "faz_prob.png").string()));
    if (rv_prob.height() != s.triplet.height() || rv_prob.width() != s.triplet.width())
        throw Error("geometry error: prediction size differs from sample");
    std::ifstream jf(pred_dir / "junctions.json");
    nlohmann::json doc;
    jf >> doc;
    const std::vector<Junction> pred_junctions = junctions_from_json(doc);

    const int h = s.triplet.height(), w = s.triplet.width();
    std::vector<std::uint8_t> canvas(std::size_t(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto g = std::uint8_t(std::lround(s.triplet.ivc(y, x) * 255.0f));
            std::uint8_t* px = canvas.data() + (std::size_t(y) * w + x) * 3;
            px[0] = px[1] = px[2] = g;
        }

    const Mask rv = binarize_prob(rv_prob, 0.5f);
    const Mask faz = binarize_prob(faz_prob, 0.5f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::uint8_t* px = canvas.data() + (std::size_t(y) * w + x) * 3;
            if (rv(y, x)) detail::blend(px, {90, 160, 255}, 0.45f);
            const bool p = faz(y, x), g = s.annotations.faz_mask(y, x);
            if (p && !g) detail::blend(px, {60, 220, 60}, 0.55f);  // over-segmentation
            if (!p && g) detail::blend(px, {230, 60, 60}, 0.55f);  // under-segmentation
        }

    for (const auto& j : pred_junctions) {
        if (j.kind == JunctionKind::bifurcation)
            detail::draw_marker(canvas, h, w, j.x, j.y, {255, 220, 40}, false);
        else
            detail::draw_marker(canvas, h, w, j.x, j.y, {40, 230, 230}, true);
    }

    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    write_png_rgb8(out_path.string(), h, w, canvas.data());
}

} // namespace vaff
