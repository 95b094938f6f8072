// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "vaff/codec/codec.hpp"
#include "vaff/tensor.hpp"

namespace vaff {

/// Grid-loss balance weights; lambda_a scales confidence error of occupied
/// cells, lambda_b of empty ones. The class term covers all cells by default
/// (the literal equation); the flag switches to occupied-cells-only.
struct GridLossParams {
    double lambda_a = 5.0;
    double lambda_b = 1.0;
    bool class_term_all_cells = true;
};

// ---------------------------------------------------------------------------
// kernels: one formula instance shared by the double-precision operations,
// the float training path, and the finite-difference tests
// ---------------------------------------------------------------------------

inline constexpr double kBceEps = 1e-7;

template <class T>
T bce_kernel(std::span<const T> pred, std::span<const T> target) {
    const T eps = T(kBceEps);
    long double acc = 0.0L;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T p = std::clamp(pred[i], eps, T(1) - eps);
        acc += -(target[i] * std::log(p) + (T(1) - target[i]) * std::log(T(1) - p));
    }
    return T(acc / (long double)(pred.size()));
}

template <class T>
void bce_kernel_grad(std::span<const T> pred, std::span<const T> target, T upstream,
                     std::span<T> grad_out) {
    const T eps = T(kBceEps);
    const T inv_n = T(1) / T(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < eps || pred[i] > T(1) - eps) continue; // clamp region: zero slope
        grad_out[i] += upstream * inv_n * (pred[i] - target[i]) / (pred[i] * (T(1) - pred[i]));
    }
}

template <class T>
T mse_kernel(std::span<const T> pred, std::span<const T> target) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const long double d = (long double)pred[i] - (long double)target[i];
        acc += d * d;
    }
    return T(acc / (long double)(pred.size()));
}

template <class T>
void mse_kernel_grad(std::span<const T> pred, std::span<const T> target, T upstream,
                     std::span<T> grad_out) {
    const T k = T(2) / T(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        grad_out[i] += upstream * k * (pred[i] - target[i]);
}

/// Grid loss over S*S cells with 4 channels each. `pred_at`/`target_at` map
/// (cell, channel) to a value, `grad_add` accumulates d/d pred; this makes
/// the kernel layout-agnostic (HWC targets vs NCHW activations).
template <class T, class PredAt, class TargetAt>
T grid_kernel(int n_cells, PredAt&& pred_at, TargetAt&& target_at, const GridLossParams& prm) {
    long double conf_occ = 0.0L, conf_empty = 0.0L, cls = 0.0L;
    for (int i = 0; i < n_cells; ++i) {
        const bool occupied = target_at(i, 0) > T(0.5);
        const long double dc = (long double)target_at(i, 0) - (long double)pred_at(i, 0);
        (occupied ? conf_occ : conf_empty) += dc * dc;
        if (prm.class_term_all_cells || occupied)
            for (int ch = 1; ch < 4; ++ch) {
                const long double d = (long double)target_at(i, ch) - (long double)pred_at(i, ch);
                cls += d * d;
            }
    }
    return T(prm.lambda_a * conf_occ + prm.lambda_b * conf_empty + cls);
}

template <class T, class PredAt, class TargetAt, class GradAdd>
void grid_kernel_grad(int n_cells, PredAt&& pred_at, TargetAt&& target_at, GradAdd&& grad_add,
                      T upstream, const GridLossParams& prm) {
    for (int i = 0; i < n_cells; ++i) {
        const bool occupied = target_at(i, 0) > T(0.5);
        const T lam = T(occupied ? prm.lambda_a : prm.lambda_b);
        grad_add(i, 0, upstream * lam * T(-2) * (target_at(i, 0) - pred_at(i, 0)));
        if (prm.class_term_all_cells || occupied)
            for (int ch = 1; ch < 4; ++ch)
                grad_add(i, ch, upstream * T(-2) * (target_at(i, ch) - pred_at(i, ch)));
    }
}

// ---------------------------------------------------------------------------
// spec operations (double precision, image/grid containers)
// ---------------------------------------------------------------------------

inline double bce_loss(const FloatImage& pred, const Mask& target) {
    if (pred.height() != target.height() || pred.width() != target.width())
        throw Error("geometry error: bce shapes differ");
    std::vector<double> p(pred.pixels().begin(), pred.pixels().end());
    std::vector<double> t(target.pixels().begin(), target.pixels().end());
    return bce_kernel<double>(p, t);
}

inline double mse_heatmap_loss(const FloatImage& pred, const FloatImage& target) {
    if (!pred.same_shape(target)) throw Error("geometry error: mse shapes differ");
    std::vector<double> p(pred.pixels().begin(), pred.pixels().end());
    std::vector<double> t(target.pixels().begin(), target.pixels().end());
    return mse_kernel<double>(p, t);
}

inline double grid_loss(const GridTarget& pred, const GridTarget& target,
                        const GridLossParams& prm = {}) {
    if (pred.s != target.s || pred.cells.size() != target.cells.size())
        throw Error("geometry error: grid shapes differ");
    const auto pa = [&](int i, int ch) { return double(pred.cells[std::size_t(i) * 4 + ch]); };
    const auto ta = [&](int i, int ch) { return double(target.cells[std::size_t(i) * 4 + ch]); };
    return grid_kernel<double>(pred.s * pred.s, pa, ta, prm);
}

// ---------------------------------------------------------------------------
// autograd wrappers (float, NCHW batches; batch dimension is averaged)
// ---------------------------------------------------------------------------

inline Tensor bce_loss_op(const Tensor& pred, const Tensor& target) {
    detail::check_shape(pred.shape() == target.shape(), "bce shapes differ");
    Tensor out = detail::make_result({1}, {pred, target});
    out.data()[0] = bce_kernel<float>(pred.values(), target.values());
    if (detail::track(out)) {
        auto self = out.node().get();
        auto pn = pred.node(), tn = target.node();
        self->backprop = [self, pn, tn] {
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            bce_kernel_grad<float>(pn->value, tn->value, self->grad[0], pn->grad);
        };
    }
    return out;
}

inline Tensor mse_loss_op(const Tensor& pred, const Tensor& target) {
    detail::check_shape(pred.shape() == target.shape(), "mse shapes differ");
    Tensor out = detail::make_result({1}, {pred, target});
    out.data()[0] = mse_kernel<float>(pred.values(), target.values());
    if (detail::track(out)) {
        auto self = out.node().get();
        auto pn = pred.node(), tn = target.node();
        self->backprop = [self, pn, tn] {
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            mse_kernel_grad<float>(pn->value, tn->value, self->grad[0], pn->grad);
        };
    }
    return out;
}

/// pred/target: [N,4,S,S]; Eq. 3 sums over cells, mean over the batch.
inline Tensor grid_loss_op(const Tensor& pred, const Tensor& target, const GridLossParams& prm) {
    detail::check_shape(pred.shape() == target.shape() && pred.shape().size() == 4 &&
                            pred.dim(1) == 4,
                        "grid loss shapes differ");
    const int n = pred.dim(0), s = pred.dim(2);
    const std::int64_t cells = std::int64_t(s) * pred.dim(3);
    Tensor out = detail::make_result({1}, {pred, target});
    double acc = 0.0;
    for (int b = 0; b < n; ++b) {
        const float* pp = pred.data() + std::int64_t(b) * 4 * cells;
        const float* tt = target.data() + std::int64_t(b) * 4 * cells;
        const auto pa = [&](int i, int ch) { return pp[std::int64_t(ch) * cells + i]; };
        const auto ta = [&](int i, int ch) { return tt[std::int64_t(ch) * cells + i]; };
        acc += grid_kernel<float>(int(cells), pa, ta, prm);
    }
    out.data()[0] = float(acc / n);
    if (detail::track(out)) {
        auto self = out.node().get();
        auto pn = pred.node(), tn = target.node();
        self->backprop = [self, pn, tn, n, cells, prm] {
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            const float upstream = self->grad[0] / float(n);
            for (int b = 0; b < n; ++b) {
                const float* pp = pn->value.data() + std::int64_t(b) * 4 * cells;
                const float* tt = tn->value.data() + std::int64_t(b) * 4 * cells;
                float* gg = pn->grad.data() + std::int64_t(b) * 4 * cells;
                const auto pa = [&](int i, int ch) { return pp[std::int64_t(ch) * cells + i]; };
                const auto ta = [&](int i, int ch) { return tt[std::int64_t(ch) * cells + i]; };
                const auto ga = [&](int i, int ch, float g) { gg[std::int64_t(ch) * cells + i] += g; };
                grid_kernel_grad<float>(int(cells), pa, ta, ga, upstream, prm);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// task balancing
// ---------------------------------------------------------------------------

struct TaskLossVector {
    double l_rv = 0.0;
    double l_faz = 0.0;
    double l_rvj_heatmap = 0.0;
    double l_rvj_grid = 0.0;

    /// The three task scalars of the total loss; RVJ combines both branches.
    std::array<double, 3> tasks() const { return {l_rv, l_faz, l_rvj_heatmap + l_rvj_grid}; }
};

/// Dynamic Weight Average state: weights follow the relative descent rate of
/// each task's loss with a softmax temperature; the first two epochs are
/// uniform and the weights always sum to the task count.
struct DwaState {
    double temperature = 2.0;
    std::vector<double> weights;                 // lambda_n
    std::vector<std::vector<double>> history;    // most recent last, capped at 2
    bool degenerate = false;

    static DwaState make(int n_tasks, double temperature = 2.0) {
        DwaState s;
        s.temperature = temperature;
        s.weights.assign(std::size_t(n_tasks), 1.0);
        return s;
    }
    int n_tasks() const { return int(weights.size()); }
};

inline DwaState dwa_update(DwaState state, const std::vector<double>& epoch_losses) {
    const int n = state.n_tasks();
    if (int(epoch_losses.size()) != n) throw Error("geometry error: dwa task count mismatch");
    state.history.push_back(epoch_losses);
    if (state.history.size() > 2) state.history.erase(state.history.begin());
    state.degenerate = false;
    if (state.history.size() < 2) {
        std::fill(state.weights.begin(), state.weights.end(), 1.0); // cold start
        return state;
    }
    const auto& prev2 = state.history[0];
    const auto& prev1 = state.history[1];
    std::vector<double> ratio(n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (!(prev2[std::size_t(i)] > 0.0) || !std::isfinite(prev1[std::size_t(i)])) {
            // degenerate history: fall back to uniform weights
            std::fill(state.weights.begin(), state.weights.end(), 1.0);
            state.degenerate = true;
            return state;
        }
        ratio[std::size_t(i)] = prev1[std::size_t(i)] / prev2[std::size_t(i)];
    }
    double max_arg = -1e300;
    for (int i = 0; i < n; ++i) max_arg = std::max(max_arg, ratio[std::size_t(i)] / state.temperature);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) denom += std::exp(ratio[std::size_t(i)] / state.temperature - max_arg);
    for (int i = 0; i < n; ++i)
        state.weights[std::size_t(i)] =
            double(n) * std::exp(ratio[std::size_t(i)] / state.temperature - max_arg) / denom;
    return state;
}

/// Eq. 2 total with N = 3 tasks.
inline double total_loss(const TaskLossVector& v, const DwaState& w) {
    if (w.n_tasks() != 3) throw Error("geometry error: total_loss expects 3 task weights");
    const auto t = v.tasks();
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        if (!std::isfinite(t[std::size_t(i)])) throw Error("numeric error: non-finite task loss");
        sum += w.weights[std::size_t(i)] * t[std::size_t(i)];
    }
    if (!std::isfinite(sum)) throw Error("numeric error: non-finite total loss");
    return sum;
}

} // namespace vaff
