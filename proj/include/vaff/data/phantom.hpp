// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "vaff/data/types.hpp"

namespace vaff {

/// Configuration for the synthetic vascular phantom. Stands in for clinical
/// OCTA data at desk scale: random vessel trees with typed junctions, a
/// central avascular disk, and depth-dependent layer contrast.
struct PhantomConfig {
    int height = 128;
    int width = 128;
    int n_trees = 2;
    double faz_radius = 14.0;
    double vessel_width_range[2] = {2.0, 3.0};
    double branch_prob = 0.35;
    std::uint64_t rng_seed = 0;
};

/// Generation internals exposed for oracle tests (per-tree masks let a test
/// recount crossings from painted-pixel overlap, independently of the
/// geometric route the generator uses).
struct PhantomDebug {
    std::vector<Mask> tree_masks;
    std::vector<Junction> bifurcations;
    std::vector<Junction> crossings;
};

namespace detail {

struct Vec2 {
    double x = 0, y = 0;
};
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

struct Stroke {
    Vec2 a, b;
    double width;
    int tree;
    int strand;
};

inline std::optional<Vec2> segment_intersection(Vec2 p, Vec2 p2, Vec2 q, Vec2 q2) {
    const Vec2 r = p2 - p, s = q2 - q;
    const double denom = cross(r, s);
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const double t = cross(q - p, s) / denom;
    const double u = cross(q - p, r) / denom;
    if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return std::nullopt;
    return p + t * r;
}

inline double point_segment_distance(Vec2 pt, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0.0 ? std::clamp(dot(pt - a, ab) / len2, 0.0, 1.0) : 0.0;
    return norm(pt - (a + t * ab));
}

inline double segment_segment_distance(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    if (segment_intersection(a, b, c, d)) return 0.0;
    return std::min(std::min(point_segment_distance(a, c, d), point_segment_distance(b, c, d)),
                    std::min(point_segment_distance(c, a, b), point_segment_distance(d, a, b)));
}

inline double crossing_angle(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    const Vec2 r = b - a, s = d - c;
    const double na = norm(r), nb = norm(s);
    if (na == 0.0 || nb == 0.0) return 0.0;
    const double cosv = std::clamp(std::abs(dot(r, s)) / (na * nb), 0.0, 1.0);
    return std::acos(cosv); // in [0, pi/2]
}

/// Smooth value noise: coarse uniform grid, bilinearly upsampled.
inline FloatImage value_noise(int h, int w, int cell, Rng& rng) {
    const int gh = h / cell + 2, gw = w / cell + 2;
    std::vector<float> grid(std::size_t(gh) * gw);
    for (auto& v : grid) v = float(rng.uniform());
    FloatImage out(h, w);
    for (int y = 0; y < h; ++y) {
        const double gy = double(y) / cell;
        const int y0 = int(gy);
        const float fy = float(gy - y0);
        for (int x = 0; x < w; ++x) {
            const double gx = double(x) / cell;
            const int x0 = int(gx);
            const float fx = float(gx - x0);
            const float* g0 = grid.data() + std::size_t(y0) * gw + x0;
            const float* g1 = g0 + gw;
            const float top = g0[0] + (g0[1] - g0[0]) * fx;
            const float bot = g1[0] + (g1[1] - g1[0]) * fx;
            out(y, x) = top + (bot - top) * fy;
        }
    }
    return out;
}

inline FloatImage speckle_noise(int h, int w, Rng& rng) {
    FloatImage raw(h, w);
    for (auto& v : raw.pixels()) v = float(rng.uniform());
    FloatImage out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float s = 0.0f;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (raw.in_bounds(y + dy, x + dx)) {
                        s += raw(y + dy, x + dx);
                        ++n;
                    }
            out(y, x) = s / float(n);
        }
    return out;
}

struct PhantomLayout {
    Vec2 faz_center;
    double faz_radius = 0;
    std::vector<Stroke> strokes;
    std::vector<Junction> bifurcations;
    std::vector<Junction> crossings;
    int n_trees = 0;
};

/// Grows all trees and derives junctions for one attempt. Returns nullopt
/// when the layout violates a cleanliness rule and must be re-rolled.
inline std::optional<PhantomLayout> try_layout(const PhantomConfig& cfg, Rng rng) {
    const int h = cfg.height, w = cfg.width;
    PhantomLayout lay;
    lay.n_trees = cfg.n_trees;
    lay.faz_center = {w / 2.0 + rng.uniform(-3.0, 3.0), h / 2.0 + rng.uniform(-3.0, 3.0)};
    lay.faz_radius = cfg.faz_radius;

    struct Pending {
        Vec2 pos;
        double heading;
        double width;
        int depth;
        int steps;
        int bif_index; // bifurcation spawned with this strand, -1 for roots
    };

    int strand_counter = 0;
    for (int t = 0; t < cfg.n_trees; ++t) {
        const double wdt = rng.uniform(cfg.vessel_width_range[0], cfg.vessel_width_range[1]);
        const int side = int(rng.uniform_int(0, 3));
        const double frac = rng.uniform(0.18, 0.82);
        Vec2 start;
        double heading;
        switch (side) {
            case 0: start = {frac * (w - 1), 1.0}; heading = M_PI / 2; break;   // top, going down
            case 1: start = {frac * (w - 1), h - 2.0}; heading = -M_PI / 2; break;
            case 2: start = {1.0, frac * (h - 1)}; heading = 0.0; break;        // left, going right
            default: start = {w - 2.0, frac * (h - 1)}; heading = M_PI; break;
        }
        heading += rng.uniform(-0.5, 0.5);

        std::deque<Pending> queue;
        queue.push_back({start, heading, wdt, 0, int(rng.uniform_int(14, 22)), -1});
        int branches = 0;

        while (!queue.empty()) {
            Pending st = queue.front();
            queue.pop_front();
            const int strand_id = strand_counter++;
            Vec2 pos = st.pos;
            double hd = st.heading;
            double total_len = 0.0;
            int segments = 0;
            const double stop_r = lay.faz_radius + st.width / 2.0 + 1.5;

            for (int step = 0; step < st.steps; ++step) {
                // branch spawn happens before the step so the parent always continues
                if (st.depth < 2 && branches < 3 && step > 0 && st.steps - step >= 3 &&
                    pos.x > 10 && pos.x < w - 11 && pos.y > 10 && pos.y < h - 11 &&
                    rng.bernoulli(cfg.branch_prob)) {
                    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
                    const double child_heading = hd + sign * rng.uniform(0.55, 1.05);
                    const int child_steps = int(rng.uniform_int(8, 14));
                    lay.bifurcations.push_back(Junction{int(std::lround(pos.x)),
                                                        int(std::lround(pos.y)),
                                                        JunctionKind::bifurcation});
                    queue.push_back({pos, child_heading, st.width * 0.85, st.depth + 1,
                                     child_steps, int(lay.bifurcations.size()) - 1});
                    ++branches;
                }
                hd += rng.normal(0.0, 0.10);
                const double len = rng.uniform(7.0, 11.0);
                Vec2 next = pos + len * Vec2{std::cos(hd), std::sin(hd)};

                // clip against the frame and the avascular stop circle
                double t_clip = 1.0;
                const Vec2 d = next - pos;
                auto clip_axis = [&](double p0, double dir, double lo, double hi) {
                    if (dir > 1e-12) t_clip = std::min(t_clip, (hi - p0) / dir);
                    else if (dir < -1e-12) t_clip = std::min(t_clip, (lo - p0) / dir);
                };
                clip_axis(pos.x, d.x, 1.5, w - 2.5);
                clip_axis(pos.y, d.y, 1.5, h - 2.5);
                {
                    // earliest entry into the circle |p + t d - c| = stop_r
                    const Vec2 f = pos - lay.faz_center;
                    const double a = dot(d, d), b = 2.0 * dot(f, d), c = dot(f, f) - stop_r * stop_r;
                    const double disc = b * b - 4 * a * c;
                    if (disc > 0.0 && a > 0.0) {
                        const double t_in = (-b - std::sqrt(disc)) / (2 * a);
                        if (t_in >= 0.0 && t_in < t_clip) t_clip = std::max(0.0, t_in - 0.02);
                    }
                }
                const bool clipped = t_clip < 1.0;
                if (clipped) next = pos + std::max(t_clip, 0.0) * d;
                const double seg_len = norm(next - pos);
                if (seg_len > 0.5) {
                    lay.strokes.push_back({pos, next, st.width, t, strand_id});
                    total_len += seg_len;
                    ++segments;
                }
                pos = next;
                if (clipped) break;
            }

            // stub strands are removed together with their bifurcation record
            if (total_len < 6.0 && st.bif_index >= 0) {
                lay.bifurcations[std::size_t(st.bif_index)] = Junction{-1, -1, JunctionKind::bifurcation};
                while (!lay.strokes.empty() && lay.strokes.back().strand == strand_id)
                    lay.strokes.pop_back();
            }
        }
    }
    std::erase_if(lay.bifurcations, [](const Junction& j) { return j.x < 0; });

    // geometric crossings between strokes of distinct trees
    struct Hit {
        Vec2 p;
        double angle;
    };
    std::vector<Hit> hits;
    for (std::size_t i = 0; i < lay.strokes.size(); ++i)
        for (std::size_t j = i + 1; j < lay.strokes.size(); ++j) {
            const auto& s1 = lay.strokes[i];
            const auto& s2 = lay.strokes[j];
            if (s1.tree == s2.tree) continue;
            if (auto p = segment_intersection(s1.a, s1.b, s2.a, s2.b))
                hits.push_back({*p, crossing_angle(s1.a, s1.b, s2.a, s2.b)});
        }

    // cluster intersection points (adjacent segments of a polyline can both hit)
    struct Cluster {
        Vec2 sum{0, 0};
        int n = 0;
        double min_angle = M_PI;
        Vec2 centroid() const { return {sum.x / n, sum.y / n}; }
    };
    std::vector<Cluster> clusters;
    for (const auto& hit : hits) {
        Cluster* best = nullptr;
        for (auto& c : clusters)
            if (norm(c.centroid() - hit.p) < 5.0) {
                best = &c;
                break;
            }
        if (!best) {
            clusters.push_back({});
            best = &clusters.back();
        }
        best->sum = best->sum + hit.p;
        best->n += 1;
        best->min_angle = std::min(best->min_angle, hit.angle);
    }
    for (const auto& c : clusters) {
        if (c.min_angle < 25.0 * M_PI / 180.0) return std::nullopt; // grazing crossing
        const Vec2 p = c.centroid();
        lay.crossings.push_back(
            Junction{int(std::lround(p.x)), int(std::lround(p.y)), JunctionKind::crossing});
    }

    // near-miss rejection: different-tree strokes whose painted widths would
    // touch without a centerline crossing confuse the pixel-overlap oracle
    for (std::size_t i = 0; i < lay.strokes.size(); ++i)
        for (std::size_t j = i + 1; j < lay.strokes.size(); ++j) {
            const auto& s1 = lay.strokes[i];
            const auto& s2 = lay.strokes[j];
            if (s1.tree == s2.tree) continue;
            const double d = segment_segment_distance(s1.a, s1.b, s2.a, s2.b);
            if (d == 0.0) continue;
            if (d < (s1.width + s2.width) / 2.0 + 1.5) {
                const Vec2 mid = 0.5 * (0.5 * (s1.a + s1.b) + 0.5 * (s2.a + s2.b));
                bool near_recorded = false;
                for (const auto& cr : lay.crossings)
                    if (norm(mid - Vec2{double(cr.x), double(cr.y)}) <
                        s1.width + s2.width + 14.0)
                        near_recorded = true;
                if (!near_recorded) return std::nullopt;
            }
        }

    // same-tree strokes must not cross away from their shared branch origin
    for (std::size_t i = 0; i < lay.strokes.size(); ++i)
        for (std::size_t j = i + 1; j < lay.strokes.size(); ++j) {
            const auto& s1 = lay.strokes[i];
            const auto& s2 = lay.strokes[j];
            if (s1.tree != s2.tree || s1.strand == s2.strand) continue;
            if (auto p = segment_intersection(s1.a, s1.b, s2.a, s2.b)) {
                bool at_origin = false;
                for (const auto& b : lay.bifurcations)
                    if (norm(*p - Vec2{double(b.x), double(b.y)}) < s1.width + 4.0)
                        at_origin = true;
                if (!at_origin) return std::nullopt;
            }
        }

    // junction placement rules: interior, pairwise separated
    std::vector<Junction> all = lay.bifurcations;
    all.insert(all.end(), lay.crossings.begin(), lay.crossings.end());
    for (const auto& a : all)
        if (a.x < 4 || a.y < 4 || a.x > w - 5 || a.y > h - 5) return std::nullopt;
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            const double dx = all[i].x - all[j].x, dy = all[i].y - all[j].y;
            if (std::sqrt(dx * dx + dy * dy) < 9.0) return std::nullopt;
        }
    return lay;
}

/// Stamps a stroke with soft edges; coverage is used for alpha blending.
inline void stamp_stroke(const Stroke& s, FloatImage& cover) {
    const double r = s.width / 2.0;
    const int x0 = std::max(0, int(std::floor(std::min(s.a.x, s.b.x) - r - 1)));
    const int x1 = std::min(cover.width() - 1, int(std::ceil(std::max(s.a.x, s.b.x) + r + 1)));
    const int y0 = std::max(0, int(std::floor(std::min(s.a.y, s.b.y) - r - 1)));
    const int y1 = std::min(cover.height() - 1, int(std::ceil(std::max(s.a.y, s.b.y) + r + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = point_segment_distance({double(x), double(y)}, s.a, s.b);
            const float c = float(std::clamp(r + 0.5 - d, 0.0, 1.0));
            if (c > cover(y, x)) cover(y, x) = c;
        }
}

inline float quantize8(float v) {
    return float(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

} // namespace detail

/// Renders a deterministic synthetic sample: >=1 vessel trees with
/// bifurcations at branch points and crossings where strokes of distinct
/// trees intersect; a central avascular disk; SVC with the strongest vessel
/// contrast, DVC with a crisp avascular-zone boundary and centrally
/// attenuated vessels, IVC as the pixelwise maximum of the two.
inline Sample generate_phantom(const PhantomConfig& cfg, PhantomDebug* debug = nullptr) {
    const int h = cfg.height, w = cfg.width;
    if (h < 32 || w < 32) throw Error("generation error: image size below 32x32");
    if (cfg.n_trees < 1) throw Error("generation error: need at least one tree");
    if (!(cfg.faz_radius < std::min(h, w) / 4.0))
        throw Error("generation error: faz_radius must be below min(H,W)/4");
    if (cfg.vessel_width_range[0] < 1.0 || cfg.vessel_width_range[1] < cfg.vessel_width_range[0])
        throw Error("generation error: bad vessel width range");
    if (cfg.branch_prob < 0.0 || cfg.branch_prob > 1.0)
        throw Error("generation error: branch_prob outside [0,1]");

    const Rng base(cfg.rng_seed);
    std::optional<detail::PhantomLayout> lay;
    for (std::uint64_t attempt = 0; attempt < 64 && !lay; ++attempt)
        lay = detail::try_layout(cfg, base.derive(attempt, 0xf0a2));
    if (!lay) throw Error("generation error: no clean layout after 64 attempts");

    // rasterize per tree (coverage in [0,1], soft 1-px edge)
    std::vector<FloatImage> tree_cover(std::size_t(cfg.n_trees), FloatImage(h, w, 0.0f));
    for (const auto& s : lay->strokes) detail::stamp_stroke(s, tree_cover[std::size_t(s.tree)]);

    Mask vessel(h, w, 0);
    for (int t = 0; t < cfg.n_trees; ++t)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (tree_cover[std::size_t(t)](y, x) >= 0.5f) vessel(y, x) = 1;

    Mask faz(h, w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = x - lay->faz_center.x, dy = y - lay->faz_center.y;
            if (dx * dx + dy * dy <= lay->faz_radius * lay->faz_radius) faz(y, x) = 1;
        }
    for (std::size_t i = 0; i < vessel.pixels().size(); ++i)
        if (vessel.pixels()[i] && faz.pixels()[i])
            throw Error("generation error: vessel entered the avascular zone");

    // layer synthesis
    Rng tex = base.derive(0xbead, 1);
    FloatImage smooth = detail::value_noise(h, w, 16, tex);
    FloatImage smooth2 = detail::value_noise(h, w, 8, tex);
    FloatImage speckle = detail::speckle_noise(h, w, tex);

    FloatImage cover_all(h, w, 0.0f);
    for (int t = 0; t < cfg.n_trees; ++t)
        for (std::size_t i = 0; i < cover_all.pixels().size(); ++i)
            cover_all.pixels()[i] = std::max(cover_all.pixels()[i],
                                             tree_cover[std::size_t(t)].pixels()[i]);

    FloatImage svc(h, w), dvc(h, w), ivc(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = std::size_t(y) * w + x;
            const double dx = x - lay->faz_center.x, dy = y - lay->faz_center.y;
            const double dist = std::sqrt(dx * dx + dy * dy);
            const float c = cover_all(y, x);

            // SVC: bright vessels on a dim smooth background
            const float svc_bg = 0.10f + 0.06f * smooth(y, x);
            const float svc_vessel = 0.72f + 0.12f * smooth2(y, x);
            svc(y, x) = svc_bg + c * (svc_vessel - svc_bg);

            // DVC: capillary speckle outside the avascular disk gives a crisp
            // boundary; large vessels fade toward the center
            float dvc_bg;
            if (faz(y, x))
                dvc_bg = 0.04f + 0.02f * smooth(y, x);
            else
                dvc_bg = 0.12f + 0.22f * speckle(y, x) + 0.06f * smooth(y, x);
            const float fade =
                float(std::clamp((dist - lay->faz_radius) / (2.2 * lay->faz_radius), 0.0, 1.0));
            const float dvc_vessel = 0.18f + 0.38f * fade;
            dvc(y, x) = dvc_bg + c * std::max(0.0f, dvc_vessel - dvc_bg);

            svc(y, x) = detail::quantize8(svc(y, x));
            dvc(y, x) = detail::quantize8(dvc(y, x));
            ivc(y, x) = std::max(svc(y, x), dvc(y, x));
        }

    Sample s;
    s.id = "phantom_" + std::to_string(cfg.rng_seed);
    s.triplet = {std::move(ivc), std::move(svc), std::move(dvc)};
    s.annotations.vessel_mask = std::move(vessel);
    s.annotations.faz_mask = std::move(faz);
    s.annotations.junctions = lay->bifurcations;
    s.annotations.junctions.insert(s.annotations.junctions.end(), lay->crossings.begin(),
                                   lay->crossings.end());
    if (debug) {
        debug->bifurcations = lay->bifurcations;
        debug->crossings = lay->crossings;
        debug->tree_masks.assign(std::size_t(cfg.n_trees), Mask(h, w, 0));
        for (int t = 0; t < cfg.n_trees; ++t)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (tree_cover[std::size_t(t)](y, x) >= 0.5f)
                        debug->tree_masks[std::size_t(t)](y, x) = 1;
    }
    return s;
}

} // namespace vaff
