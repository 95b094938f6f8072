// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vaff/image.hpp"

namespace vaff {

enum class JunctionKind { bifurcation, crossing };

inline const char* to_string(JunctionKind k) {
    return k == JunctionKind::bifurcation ? "bifurcation" : "crossing";
}
inline JunctionKind junction_kind_from_string(const std::string& s) {
    if (s == "bifurcation") return JunctionKind::bifurcation;
    if (s == "crossing") return JunctionKind::crossing;
    throw Error("annotation error: unknown junction kind '" + s + "'");
}

/// A typed vascular junction at integer pixel coordinates (0-based, x = column).
struct Junction {
    int x = 0;
    int y = 0;
    JunctionKind kind = JunctionKind::bifurcation;

    friend bool operator==(const Junction&, const Junction&) = default;
};

/// Three co-registered grayscale en-face angiograms, values in [0,1].
struct EnfaceTriplet {
    FloatImage ivc, svc, dvc;

    int height() const { return ivc.height(); }
    int width() const { return ivc.width(); }
    bool consistent() const { return ivc.same_shape(svc) && ivc.same_shape(dvc); }
};

struct AnnotationSet {
    Mask vessel_mask;
    Mask faz_mask;
    std::vector<Junction> junctions;
};

struct Sample {
    std::string id;
    EnfaceTriplet triplet;
    AnnotationSet annotations;
};

/// Train-time geometric/photometric augmentation parameters.
struct AugmentParams {
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;
    double rotation_range_deg[2] = {-10.0, 10.0};
    double gamma_range[2] = {0.7, 1.9};

    static AugmentParams identity() {
        AugmentParams p;
        p.hflip_prob = 0.0;
        p.vflip_prob = 0.0;
        p.rotation_range_deg[0] = p.rotation_range_deg[1] = 0.0;
        p.gamma_range[0] = p.gamma_range[1] = 1.0;
        return p;
    }
};

inline nlohmann::json junctions_to_json(const std::vector<Junction>& js) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& j : js)
        arr.push_back({{"x", j.x}, {"y", j.y}, {"kind", to_string(j.kind)}});
    return nlohmann::json{{"junctions", arr}};
}

inline std::vector<Junction> junctions_from_json(const nlohmann::json& doc) {
    if (!doc.contains("junctions") || !doc["junctions"].is_array())
        throw Error("annotation error: missing 'junctions' array");
    std::vector<Junction> out;
    for (const auto& e : doc["junctions"]) {
        Junction j;
        j.x = e.at("x").get<int>();
        j.y = e.at("y").get<int>();
        j.kind = junction_kind_from_string(e.at("kind").get<std::string>());
        out.push_back(j);
    }
    return out;
}

/// Normalizes 8-bit-range integer pixels to [0,1] by division with 255.
inline FloatImage normalize(const Image<int>& raw) {
    FloatImage out(raw.height(), raw.width());
    for (std::size_t i = 0; i < raw.pixels().size(); ++i) {
        const int v = raw.pixels()[i];
        if (v < 0 || v > 255) throw Error("range error: pixel value outside [0,255]");
        out.pixels()[i] = float(v) / 255.0f;
    }
    return out;
}

inline FloatImage normalize(const Image<std::uint8_t>& raw) {
    FloatImage out(raw.height(), raw.width());
    for (std::size_t i = 0; i < raw.pixels().size(); ++i)
        out.pixels()[i] = float(raw.pixels()[i]) / 255.0f;
    return out;
}

} // namespace vaff
