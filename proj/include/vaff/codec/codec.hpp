// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vaff/data/types.hpp"

namespace vaff {

/// Gaussian junction heatmap; the annotated pixel itself carries value 1.0,
/// overlapping kernels combine by pointwise max.
struct Heatmap {
    FloatImage values;
    float sigma = 2.5f;
};

/// S x S x 4 cell tensor, channel order (confidence, p_bifurcation,
/// p_crossing, p_background). Used both for encoded targets and for network
/// predictions.
struct GridTarget {
    int s = 0;
    int cell_size = 8;
    std::vector<float> cells; // row-major [s][s][4]

    static constexpr int kConfidence = 0;
    static constexpr int kBifurcation = 1;
    static constexpr int kCrossing = 2;
    static constexpr int kBackground = 3;

    float& at(int row, int col, int ch) { return cells[(std::size_t(row) * s + col) * 4 + ch]; }
    float at(int row, int col, int ch) const { return cells[(std::size_t(row) * s + col) * 4 + ch]; }
};

struct DecodeParams {
    float peak_threshold = 0.4f;
    float nms_radius = 3.0f;
    float confidence_threshold = 0.5f;
};

struct Peak {
    int x = 0, y = 0;
    float score = 0.0f;
};

inline int grid_cells_for(int extent, int cell_size) {
    return (extent + cell_size - 1) / cell_size;
}

inline Heatmap encode_heatmap(const std::vector<Junction>& junctions, int h, int w,
                              float sigma = 2.5f) {
    for (const auto& j : junctions)
        if (j.x < 0 || j.y < 0 || j.x >= w || j.y >= h)
            throw Error("annotation error: junction out of bounds");
    Heatmap hm{FloatImage(h, w, 0.0f), sigma};
    if (junctions.empty()) return hm;

    // separable lookup: exp(-(dx^2+dy^2)/(2s^2)) = ex[|dx|] * ex[|dy|]
    const int table_n = std::max(h, w);
    std::vector<float> ex(table_n, 0.0f);
    const float inv = 1.0f / (2.0f * sigma * sigma);
    for (int d = 0; d < table_n; ++d) ex[std::size_t(d)] = std::exp(-float(d) * float(d) * inv);

    for (const auto& j : junctions)
        for (int y = 0; y < h; ++y) {
            const float ey = ex[std::size_t(std::abs(y - j.y))];
            float* row = hm.values.data() + std::size_t(y) * w;
            for (int x = 0; x < w; ++x) {
                const float v = ey * ex[std::size_t(std::abs(x - j.x))];
                if (v > row[x]) row[x] = v;
            }
        }
    return hm;
}

/// Cell (floor(y/cell), floor(x/cell)) gets confidence 1 and the one-hot
/// class of its junction; all other cells are background. When two junctions
/// share a cell, the one nearest the cell center wins (ties: earlier index).
inline GridTarget encode_grid(const std::vector<Junction>& junctions, int h, int w,
                              int cell_size = 8) {
    if (cell_size < 1) throw Error("geometry error: cell_size must be >= 1");
    const int s = grid_cells_for(std::max(h, w), cell_size);
    GridTarget g{s, cell_size, std::vector<float>(std::size_t(s) * s * 4, 0.0f)};
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) g.at(r, c, GridTarget::kBackground) = 1.0f;

    std::vector<double> best_dist(std::size_t(s) * s, -1.0);
    for (const auto& j : junctions) {
        if (j.x < 0 || j.y < 0 || j.x >= w || j.y >= h)
            throw Error("annotation error: junction out of bounds");
        const int row = j.y / cell_size, col = j.x / cell_size;
        const double cx = (col + 0.5) * cell_size, cy = (row + 0.5) * cell_size;
        const double d = (j.x - cx) * (j.x - cx) + (j.y - cy) * (j.y - cy);
        double& best = best_dist[std::size_t(row) * s + col];
        if (best >= 0.0 && d >= best) continue;
        best = d;
        g.at(row, col, GridTarget::kConfidence) = 1.0f;
        g.at(row, col, GridTarget::kBifurcation) = j.kind == JunctionKind::bifurcation ? 1.0f : 0.0f;
        g.at(row, col, GridTarget::kCrossing) = j.kind == JunctionKind::crossing ? 1.0f : 0.0f;
        g.at(row, col, GridTarget::kBackground) = 0.0f;
    }
    return g;
}

/// Strict 8-neighbour local maxima above the threshold, then greedy NMS by
/// descending score (ties: smaller y, then smaller x).
inline std::vector<Peak> extract_peaks(const Heatmap& hm, const DecodeParams& p) {
    const auto& v = hm.values;
    const int h = v.height(), w = v.width();
    std::vector<Peak> candidates;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float s = v(y, x);
            if (s < p.peak_threshold) continue;
            bool strict_max = true;
            for (int dy = -1; dy <= 1 && strict_max; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (v.in_bounds(y + dy, x + dx) && v(y + dy, x + dx) >= s) {
                        strict_max = false;
                        break;
                    }
                }
            if (strict_max) candidates.push_back({x, y, s});
        }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Peak& a, const Peak& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    std::vector<Peak> kept;
    const float r2 = p.nms_radius * p.nms_radius;
    for (const auto& c : candidates) {
        bool suppressed = false;
        for (const auto& k : kept) {
            const float dx = float(c.x - k.x), dy = float(c.y - k.y);
            if (dx * dx + dy * dy <= r2) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(c);
    }
    return kept;
}

/// Combines heatmap peaks with the grid branch: a peak survives when its cell
/// is confident and classified as a junction; argmax ties resolve in channel
/// order (bifurcation first).
inline std::vector<Junction> assemble_junctions(const std::vector<Peak>& peaks,
                                                const GridTarget& grid, const DecodeParams& p) {
    std::vector<Junction> out;
    for (const auto& peak : peaks) {
        const int row = std::min(peak.y / grid.cell_size, grid.s - 1);
        const int col = std::min(peak.x / grid.cell_size, grid.s - 1);
        if (grid.at(row, col, GridTarget::kConfidence) < p.confidence_threshold) continue;
        int best = GridTarget::kBifurcation;
        for (int ch = GridTarget::kCrossing; ch <= GridTarget::kBackground; ++ch)
            if (grid.at(row, col, ch) > grid.at(row, col, best)) best = ch;
        if (best == GridTarget::kBackground) continue;
        out.push_back({peak.x, peak.y,
                       best == GridTarget::kBifurcation ? JunctionKind::bifurcation
                                                        : JunctionKind::crossing});
    }
    return out;
}

inline std::vector<Junction> decode_junctions(const Heatmap& hm, const GridTarget& grid,
                                              const DecodeParams& p) {
    return assemble_junctions(extract_peaks(hm, p), grid, p);
}

/// Test utility: encode then decode. Exact recovery holds for layouts whose
/// junctions are well separated (pairwise distance above max(nms_radius,
/// cell_size) and in distinct cells).
inline std::vector<Junction> round_trip(const std::vector<Junction>& junctions, int h, int w,
                                        float sigma = 2.5f, int cell_size = 8,
                                        const DecodeParams& p = {}) {
    const Heatmap hm = encode_heatmap(junctions, h, w, sigma);
    const GridTarget grid = encode_grid(junctions, h, w, cell_size);
    return decode_junctions(hm, grid, p);
}

} // namespace vaff
