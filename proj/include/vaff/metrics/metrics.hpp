// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "vaff/data/types.hpp"
#include "vaff/net/output.hpp"

namespace vaff {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
    if (!pred.same_shape(gt)) throw Error("geometry error: mask shapes differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.pixels().size(); ++i) {
        const bool p = pred.pixels()[i] != 0, g = gt.pixels()[i] != 0;
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// DICE = 2 TP / (2 TP + FP + FN); two empty masks score 1 by convention.
inline double dice(const Mask& pred, const Mask& gt) {
    const ConfusionCounts c = confusion(pred, gt);
    const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : 2.0 * double(c.tp) / double(denom);
}

struct BaccResult {
    double value = 0.0;
    bool partial = false; // one side had an empty denominator and was dropped
};

/// Mean of TPR and TNR. A side without ground-truth pixels counts as 1 when
/// the prediction is also clean there, otherwise that side is omitted and the
/// result flagged partial.
inline BaccResult bacc_full(const Mask& pred, const Mask& gt) {
    const ConfusionCounts c = confusion(pred, gt);
    std::optional<double> tpr, tnr;
    if (c.tp + c.fn > 0) tpr = double(c.tp) / double(c.tp + c.fn);
    else if (c.fp == 0) tpr = 1.0;
    if (c.tn + c.fp > 0) tnr = double(c.tn) / double(c.tn + c.fp);
    else if (c.fn == 0) tnr = 1.0;
    if (tpr && tnr) return {(*tpr + *tnr) / 2.0, false};
    if (tpr) return {*tpr, true};
    if (tnr) return {*tnr, true};
    return {0.0, true};
}

inline double bacc(const Mask& pred, const Mask& gt) { return bacc_full(pred, gt).value; }

/// One-to-one junction pairing under a pixel tolerance (inclusive).
struct Matching {
    struct Pair {
        int pred_index, gt_index;
        double distance;
    };
    std::vector<Pair> pairs;
    std::vector<int> unmatched_pred;
    std::vector<int> unmatched_gt;
    double tolerance = 5.0;
};

/// Greedy nearest-first matching over all pred-gt pairs within tolerance;
/// ties break by lower pred index, then lower gt index. Class is ignored.
inline Matching match_junctions(const std::vector<Junction>& pred,
                                const std::vector<Junction>& gt, double tol = 5.0) {
    struct Cand {
        double d;
        int pi, gi;
    };
    std::vector<Cand> cands;
    for (int pi = 0; pi < int(pred.size()); ++pi)
        for (int gi = 0; gi < int(gt.size()); ++gi) {
            const double dx = pred[std::size_t(pi)].x - gt[std::size_t(gi)].x;
            const double dy = pred[std::size_t(pi)].y - gt[std::size_t(gi)].y;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d <= tol) cands.push_back({d, pi, gi});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.d != b.d) return a.d < b.d;
        if (a.pi != b.pi) return a.pi < b.pi;
        return a.gi < b.gi;
    });
    Matching m;
    m.tolerance = tol;
    std::vector<bool> pred_used(pred.size(), false), gt_used(gt.size(), false);
    for (const auto& c : cands) {
        if (pred_used[std::size_t(c.pi)] || gt_used[std::size_t(c.gi)]) continue;
        pred_used[std::size_t(c.pi)] = gt_used[std::size_t(c.gi)] = true;
        m.pairs.push_back({c.pi, c.gi, c.d});
    }
    for (int pi = 0; pi < int(pred.size()); ++pi)
        if (!pred_used[std::size_t(pi)]) m.unmatched_pred.push_back(pi);
    for (int gi = 0; gi < int(gt.size()); ++gi)
        if (!gt_used[std::size_t(gi)]) m.unmatched_gt.push_back(gi);
    return m;
}

struct ReF1 {
    std::optional<double> re;
    std::optional<double> f1;
};

inline ReF1 detection_metrics(const Matching& m) {
    const std::int64_t tp = std::int64_t(m.pairs.size());
    const std::int64_t fn = std::int64_t(m.unmatched_gt.size());
    const std::int64_t fp = std::int64_t(m.unmatched_pred.size());
    ReF1 r;
    if (tp + fn > 0) r.re = double(tp) / double(tp + fn);
    std::optional<double> pr;
    if (tp + fp > 0) pr = double(tp) / double(tp + fp);
    if (r.re && pr && (*pr + *r.re) > 0.0) r.f1 = 2.0 * *pr * *r.re / (*pr + *r.re);
    return r;
}

/// Classification over matched pairs with bifurcation as the positive class;
/// unmatched ground-truth bifurcations count as misses and unmatched predicted
/// bifurcations as false alarms.
inline ReF1 classification_metrics(const Matching& m, const std::vector<Junction>& pred,
                                   const std::vector<Junction>& gt) {
    std::int64_t tp = 0, fn = 0, fp = 0;
    for (const auto& p : m.pairs) {
        const bool pb = pred[std::size_t(p.pred_index)].kind == JunctionKind::bifurcation;
        const bool gb = gt[std::size_t(p.gt_index)].kind == JunctionKind::bifurcation;
        if (gb && pb) ++tp;
        else if (gb && !pb) ++fn;
        else if (!gb && pb) ++fp;
    }
    for (int gi : m.unmatched_gt)
        if (gt[std::size_t(gi)].kind == JunctionKind::bifurcation) ++fn;
    for (int pi : m.unmatched_pred)
        if (pred[std::size_t(pi)].kind == JunctionKind::bifurcation) ++fp;
    ReF1 r;
    if (tp + fn > 0) r.re = double(tp) / double(tp + fn);
    std::optional<double> pr;
    if (tp + fp > 0) pr = double(tp) / double(tp + fp);
    if (r.re && pr && (*pr + *r.re) > 0.0) r.f1 = 2.0 * *pr * *r.re / (*pr + *r.re);
    return r;
}

/// Per-sample metric block, column order following the evaluation tables:
/// RV DICE/BACC, FAZ DICE/BACC, RVJ detection RE/F1, RVJ classification RE/F1.
struct MetricsReport {
    std::optional<double> rv_dice, rv_bacc;
    std::optional<double> faz_dice, faz_bacc;
    std::optional<double> det_re, det_f1;
    std::optional<double> cls_re, cls_f1;

    std::array<std::optional<double>, 8> columns() const {
        return {rv_dice, rv_bacc, faz_dice, faz_bacc, det_re, det_f1, cls_re, cls_f1};
    }
    static std::array<const char*, 8> column_names() {
        return {"rv_dice", "rv_bacc", "faz_dice", "faz_bacc",
                "det_re", "det_f1", "cls_re", "cls_f1"};
    }
};

inline Mask binarize_prob(const FloatImage& prob, float threshold) {
    Mask m(prob.height(), prob.width());
    for (std::size_t i = 0; i < prob.pixels().size(); ++i)
        m.pixels()[i] = prob.pixels()[i] >= threshold ? 1 : 0; // >= : ties are positive
    return m;
}

inline MetricsReport evaluate_sample(const NetworkOutput& out, const AnnotationSet& ann,
                                     const DecodeParams& decode = {}, float seg_threshold = 0.5f,
                                     double tolerance = 5.0) {
    if (out.rv_prob.height() != ann.vessel_mask.height() ||
        out.rv_prob.width() != ann.vessel_mask.width())
        throw Error("geometry error: output/annotation size mismatch");
    MetricsReport r;
    const Mask rv = binarize_prob(out.rv_prob, seg_threshold);
    const Mask faz = binarize_prob(out.faz_prob, seg_threshold);
    r.rv_dice = dice(rv, ann.vessel_mask);
    r.rv_bacc = bacc_full(rv, ann.vessel_mask).value;
    r.faz_dice = dice(faz, ann.faz_mask);
    r.faz_bacc = bacc_full(faz, ann.faz_mask).value;

    const Heatmap hm{out.rvj_heatmap, 2.5f};
    const std::vector<Junction> pred = decode_junctions(hm, out.rvj_grid, decode);
    const Matching m = match_junctions(pred, ann.junctions, tolerance);
    const ReF1 det = detection_metrics(m);
    const ReF1 cls = classification_metrics(m, pred, ann.junctions);
    r.det_re = det.re;
    r.det_f1 = det.f1;
    r.cls_re = cls.re;
    r.cls_f1 = cls.f1;
    return r;
}

/// mean +- std aggregation over per-sample rows; nulls are excluded per column.
struct AggregateReport {
    std::vector<std::pair<std::string, MetricsReport>> rows;

    struct Stat {
        std::optional<double> mean, stddev;
        int n = 0;
    };
    std::array<Stat, 8> aggregate() const {
        std::array<Stat, 8> st;
        for (int c = 0; c < 8; ++c) {
            double sum = 0.0;
            int n = 0;
            for (const auto& [id, r] : rows)
                if (r.columns()[std::size_t(c)]) {
                    sum += *r.columns()[std::size_t(c)];
                    ++n;
                }
            st[std::size_t(c)].n = n;
            if (n == 0) continue;
            const double mean = sum / n;
            st[std::size_t(c)].mean = mean;
            double var = 0.0;
            for (const auto& [id, r] : rows)
                if (r.columns()[std::size_t(c)]) {
                    const double d = *r.columns()[std::size_t(c)] - mean;
                    var += d * d;
                }
            st[std::size_t(c)].stddev = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
        }
        return st;
    }

    std::string to_text() const {
        auto cell = [](const std::optional<double>& v) {
            char buf[32];
            if (!v) return std::string("null");
            std::snprintf(buf, sizeof(buf), "%.4f", *v);
            return std::string(buf);
        };
        std::string s = "sample";
        for (const char* name : MetricsReport::column_names()) s += std::string("\t") + name;
        s += "\n";
        for (const auto& [id, r] : rows) {
            s += id;
            for (const auto& v : r.columns()) s += "\t" + cell(v);
            s += "\n";
        }
        const auto st = aggregate();
        s += "mean";
        for (const auto& a : st) s += "\t" + cell(a.mean);
        s += "\nstd";
        for (const auto& a : st) s += "\t" + cell(a.stddev);
        s += "\n";
        return s;
    }
};

} // namespace vaff
