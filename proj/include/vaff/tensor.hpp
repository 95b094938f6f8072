// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "vaff/common.hpp"

namespace vaff {

using MatMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Reverse-mode autograd node. Tensors are shared handles to these.
struct TensorNode {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backprop;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0f);
    }
};

/// Global switch; evaluation paths disable graph construction.
struct GradMode {
    static bool& flag() {
        thread_local bool enabled = true;
        return enabled;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::flag()) { GradMode::flag() = false; }
    ~NoGradGuard() { GradMode::flag() = prev; }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0f, requires_grad);
    }
    static Tensor filled(std::vector<int> shape, float v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value.assign(std::size_t(n->numel()), v);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor from(std::vector<float> data, std::vector<int> shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        if (std::int64_t(data.size()) != n->numel())
            throw Error("geometry error: tensor data/shape mismatch");
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor scalar(float v) { return from({v}, {1}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[std::size_t(i)]; }
    std::int64_t numel() const { return node_->numel(); }
    float* data() { return node_->value.data(); }
    const float* data() const { return node_->value.data(); }
    std::vector<float>& values() { return node_->value; }
    const std::vector<float>& values() const { return node_->value; }
    float item() const {
        if (node_->numel() != 1) throw Error("geometry error: item() on non-scalar");
        return node_->value[0];
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    std::vector<float>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

    Tensor detach() const {
        auto n = std::make_shared<TensorNode>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(n);
    }

    const std::shared_ptr<TensorNode>& node() const { return node_; }

    /// Backpropagates from this scalar through the recorded graph.
    void backward() const {
        if (node_->numel() != 1) throw Error("geometry error: backward() on non-scalar");
        std::vector<TensorNode*> order;
        std::unordered_set<TensorNode*> seen;
        std::vector<std::pair<TensorNode*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, i] = stack.back();
            if (i < n->parents.size()) {
                TensorNode* p = n->parents[i++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] = 1.0f;
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backprop) (*it)->backprop();
    }

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline void check_shape(bool ok, const char* what) {
    if (!ok) throw Error(std::string("geometry error: ") + what);
}

inline Tensor make_result(std::vector<int> shape, std::vector<Tensor> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.resize(std::size_t(n->numel()));
    if (GradMode::flag()) {
        for (const auto& p : parents)
            if (p.requires_grad()) {
                n->requires_grad = true;
                n->parents.push_back(p.node());
            }
        if (n->requires_grad) {
            // keep non-grad parents alive too: closures read their values
            n->parents.clear();
            for (const auto& p : parents) n->parents.push_back(p.node());
        }
    }
    return Tensor(n);
}

inline bool track(const Tensor& out) { return out.node()->requires_grad; }

/// Scratch buffers reused across conv calls; sized to the largest patch matrix.
inline std::vector<float>& conv_scratch(int which) {
    thread_local std::vector<float> bufs[2];
    return bufs[which];
}

inline void im2col(const float* x, int c_in, int h, int w, int kh, int kw, int stride, int pad,
                   int oh, int ow, float* col) {
    const std::int64_t plane = std::int64_t(oh) * ow;
    for (int c = 0; c < c_in; ++c) {
        const float* xc = x + std::int64_t(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                float* crow = col + ((std::int64_t(c) * kh + ky) * kw + kx) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    float* dst = crow + std::int64_t(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, 0.0f);
                        continue;
                    }
                    const float* src = xc + std::int64_t(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

inline void col2im_accum(const float* col, int c_in, int h, int w, int kh, int kw, int stride,
                         int pad, int oh, int ow, float* x_grad) {
    const std::int64_t plane = std::int64_t(oh) * ow;
    for (int c = 0; c < c_in; ++c) {
        float* xc = x_grad + std::int64_t(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const float* crow = col + ((std::int64_t(c) * kh + ky) * kw + kx) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const float* src = crow + std::int64_t(oy) * ow;
                    float* dst = xc + std::int64_t(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_shape(a.shape() == b.shape(), "add shape mismatch");
    Tensor out = detail::make_result(a.shape(), {a, b});
    const std::size_t n = a.values().size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::track(out)) {
        auto self = out.node().get();
        auto an = a.node(), bn = b.node();
        self->backprop = [self, an, bn] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) an->grad[i] += self->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) bn->grad[i] += self->grad[i];
            }
        };
    }
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor out = detail::make_result(a.shape(), {a});
    for (std::size_t i = 0; i < a.values().size(); ++i) out.data()[i] = a.data()[i] * s;
    if (detail::track(out)) {
        auto self = out.node().get();
        auto an = a.node();
        self->backprop = [self, an, s] {
            an->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) an->grad[i] += s * self->grad[i];
        };
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_shape(a.shape() == b.shape(), "mul shape mismatch");
    Tensor out = detail::make_result(a.shape(), {a, b});
    for (std::size_t i = 0; i < a.values().size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::track(out)) {
        auto self = out.node().get();
        auto an = a.node(), bn = b.node();
        self->backprop = [self, an, bn] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    an->grad[i] += bn->value[i] * self->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    bn->grad[i] += an->value[i] * self->grad[i];
            }
        };
    }
    return out;
}

/// Elementwise max/min with subgradient routed to the winning side (ties -> a).
inline Tensor elementwise_extremum(const Tensor& a, const Tensor& b, bool take_max) {
    detail::check_shape(a.shape() == b.shape(), "extremum shape mismatch");
    Tensor out = detail::make_result(a.shape(), {a, b});
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const float av = a.data()[i], bv = b.data()[i];
        out.data()[i] = take_max ? std::max(av, bv) : std::min(av, bv);
    }
    if (detail::track(out)) {
        auto self = out.node().get();
        auto an = a.node(), bn = b.node();
        self->backprop = [self, an, bn, take_max] {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                const bool a_wins =
                    take_max ? (an->value[i] >= bn->value[i]) : (an->value[i] <= bn->value[i]);
                if (a_wins) {
                    if (an->requires_grad) an->grad[i] += self->grad[i];
                } else if (bn->requires_grad) {
                    bn->grad[i] += self->grad[i];
                }
            }
        };
    }
    return out;
}

inline Tensor vmax(const Tensor& a, const Tensor& b) { return elementwise_extremum(a, b, true); }
inline Tensor vmin(const Tensor& a, const Tensor& b) { return elementwise_extremum(a, b, false); }

inline Tensor relu(const Tensor& a) {
    Tensor out = detail::make_result(a.shape(), {a});
    for (std::size_t i = 0; i < a.values().size(); ++i) out.data()[i] = std::max(a.data()[i], 0.0f);
    if (detail::track(out)) {
        auto self = out.node().get();
        auto an = a.node();
        self->backprop = [self, an] {
            an->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                if (self->value[i] > 0.0f) an->grad[i] += self->grad[i];
        };
    }
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = detail::make_result(a.shape(), {a});
    for (std::size_t i = 0; i < a.values().size(); ++i)
        out.data()[i] = 1.0f / (1.0f + std::exp(-a.data()[i]));
    if (detail::track(out)) {
        auto self = out.node().get();
        auto an = a.node();
        self->backprop = [self, an] {
            an->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                const float s = self->value[i];
                an->grad[i] += s * (1.0f - s) * self->grad[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops (NCHW)
// ---------------------------------------------------------------------------

/// gate: [N,1,H,W] broadcast-multiplied over the channels of x: [N,C,H,W].
inline Tensor mul_channel_broadcast(const Tensor& gate, const Tensor& x) {
    detail::check_shape(gate.shape().size() == 4 && x.shape().size() == 4 && gate.dim(1) == 1 &&
                            gate.dim(0) == x.dim(0) && gate.dim(2) == x.dim(2) &&
                            gate.dim(3) == x.dim(3),
                        "broadcast mul shape mismatch");
    const int n = x.dim(0), c = x.dim(1);
    const std::int64_t hw = std::int64_t(x.dim(2)) * x.dim(3);
    Tensor out = detail::make_result(x.shape(), {gate, x});
    for (int i = 0; i < n; ++i) {
        const float* g = gate.data() + std::int64_t(i) * hw;
        for (int ch = 0; ch < c; ++ch) {
            const float* xs = x.data() + (std::int64_t(i) * c + ch) * hw;
            float* os = out.data() + (std::int64_t(i) * c + ch) * hw;
            for (std::int64_t p = 0; p < hw; ++p) os[p] = g[p] * xs[p];
        }
    }
    if (detail::track(out)) {
        auto self = out.node().get();
        auto gn = gate.node(), xn = x.node();
        self->backprop = [self, gn, xn, n, c, hw] {
            if (gn->requires_grad) gn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const float* g = gn->value.data() + std::int64_t(i) * hw;
                float* gg = gn->requires_grad ? gn->grad.data() + std::int64_t(i) * hw : nullptr;
                for (int ch = 0; ch < c; ++ch) {
                    const std::int64_t off = (std::int64_t(i) * c + ch) * hw;
                    const float* xs = xn->value.data() + off;
                    const float* og = self->grad.data() + off;
                    if (gg)
                        for (std::int64_t p = 0; p < hw; ++p) gg[p] += og[p] * xs[p];
                    if (xn->requires_grad) {
                        float* xg = xn->grad.data() + off;
                        for (std::int64_t p = 0; p < hw; ++p) xg[p] += og[p] * g[p];
                    }
                }
            }
        };
    }
    return out;
}

inline Tensor concat_channels(const std::vector<Tensor>& xs) {
    detail::check_shape(!xs.empty() && xs[0].shape().size() == 4, "concat needs NCHW inputs");
    const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int c_total = 0;
    for (const auto& x : xs) {
        detail::check_shape(x.dim(0) == n && x.dim(2) == h && x.dim(3) == w,
                            "concat shape mismatch");
        c_total += x.dim(1);
    }
    const std::int64_t hw = std::int64_t(h) * w;
    Tensor out = detail::make_result({n, c_total, h, w}, xs);
    int c_off = 0;
    for (const auto& x : xs) {
        const int c = x.dim(1);
        for (int i = 0; i < n; ++i)
            std::copy_n(x.data() + std::int64_t(i) * c * hw, std::size_t(c * hw),
                        out.data() + (std::int64_t(i) * c_total + c_off) * hw);
        c_off += c;
    }
    if (detail::track(out)) {
        auto self = out.node().get();
        std::vector<std::shared_ptr<TensorNode>> nodes;
        for (const auto& x : xs) nodes.push_back(x.node());
        self->backprop = [self, nodes, n, c_total, hw] {
            int c_off2 = 0;
            for (const auto& xn : nodes) {
                const int c = xn->shape[1];
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    for (int i = 0; i < n; ++i) {
                        const float* src = self->grad.data() + (std::int64_t(i) * c_total + c_off2) * hw;
                        float* dst = xn->grad.data() + std::int64_t(i) * c * hw;
                        for (std::int64_t p = 0; p < std::int64_t(c) * hw; ++p) dst[p] += src[p];
                    }
                }
                c_off2 += c;
            }
        };
    }
    return out;
}

inline Tensor slice_channels(const Tensor& x, int c0, int count) {
    detail::check_shape(x.shape().size() == 4 && c0 >= 0 && c0 + count <= x.dim(1),
                        "slice out of range");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = std::int64_t(h) * w;
    Tensor out = detail::make_result({n, count, h, w}, {x});
    for (int i = 0; i < n; ++i)
        std::copy_n(x.data() + (std::int64_t(i) * c + c0) * hw, std::size_t(count * hw),
                    out.data() + std::int64_t(i) * count * hw);
    if (detail::track(out)) {
        auto self = out.node().get();
        auto xn = x.node();
        self->backprop = [self, xn, n, c, c0, count, hw] {
            xn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const float* src = self->grad.data() + std::int64_t(i) * count * hw;
                float* dst = xn->grad.data() + (std::int64_t(i) * c + c0) * hw;
                for (std::int64_t p = 0; p < std::int64_t(count) * hw; ++p) dst[p] += src[p];
            }
        };
    }
    return out;
}

/// 2D convolution, NCHW. weight: [C_out, C_in, kh, kw], bias: [C_out] (optional).
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                     int pad) {
    detail::check_shape(x.shape().size() == 4 && weight.shape().size() == 4 &&
                            x.dim(1) == weight.dim(1),
                        "conv2d shape mismatch");
    const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    detail::check_shape(oh > 0 && ow > 0, "conv2d output collapsed");
    const std::int64_t k = std::int64_t(c_in) * kh * kw;
    const std::int64_t plane = std::int64_t(oh) * ow;

    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    Tensor out = detail::make_result({n, c_out, oh, ow}, parents);

    auto& col = detail::conv_scratch(0);
    col.resize(std::size_t(k * plane));
    ConstMatMap wmat(weight.data(), c_out, k);
    for (int i = 0; i < n; ++i) {
        detail::im2col(x.data() + std::int64_t(i) * c_in * h * w, c_in, h, w, kh, kw, stride, pad,
                       oh, ow, col.data());
        ConstMatMap cmat(col.data(), k, plane);
        MatMap omat(out.data() + std::int64_t(i) * c_out * plane, c_out, plane);
        omat.noalias() = wmat * cmat;
        if (bias.defined())
            for (int co = 0; co < c_out; ++co)
                omat.row(co).array() += bias.data()[co];
    }

    if (detail::track(out)) {
        auto self = out.node().get();
        auto xn = x.node(), wn = weight.node();
        auto bn = bias.defined() ? bias.node() : nullptr;
        self->backprop = [self, xn, wn, bn, n, c_in, h, w, c_out, kh, kw, stride, pad, oh, ow, k,
                          plane] {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn && bn->requires_grad) bn->ensure_grad();
            auto& col = detail::conv_scratch(0);
            auto& dcol = detail::conv_scratch(1);
            col.resize(std::size_t(k * plane));
            dcol.resize(std::size_t(k * plane));
            ConstMatMap wmat(wn->value.data(), c_out, k);
            for (int i = 0; i < n; ++i) {
                ConstMatMap gmat(self->grad.data() + std::int64_t(i) * c_out * plane, c_out, plane);
                if (wn->requires_grad) {
                    detail::im2col(xn->value.data() + std::int64_t(i) * c_in * h * w, c_in, h, w,
                                   kh, kw, stride, pad, oh, ow, col.data());
                    ConstMatMap cmat(col.data(), k, plane);
                    MatMap wg(wn->grad.data(), c_out, k);
                    wg.noalias() += gmat * cmat.transpose();
                }
                if (bn && bn->requires_grad)
                    for (int co = 0; co < c_out; ++co) bn->grad[co] += gmat.row(co).sum();
                if (xn->requires_grad) {
                    MatMap dc(dcol.data(), k, plane);
                    dc.noalias() = wmat.transpose() * gmat;
                    detail::col2im_accum(dcol.data(), c_in, h, w, kh, kw, stride, pad, oh, ow,
                                         xn->grad.data() + std::int64_t(i) * c_in * h * w);
                }
            }
        };
    }
    return out;
}

/// Batch norm over NCHW. Training mode uses batch statistics and updates the
/// running buffers in place; eval mode reads the running buffers.
inline Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           std::vector<float>& running_mean, std::vector<float>& running_var,
                           bool training, float momentum = 0.1f, float eps = 1e-5f) {
    detail::check_shape(x.shape().size() == 4, "batch_norm input must be NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    detail::check_shape(int(running_mean.size()) == c && gamma.numel() == c && beta.numel() == c,
                        "batch_norm channel mismatch");
    const std::int64_t hw = std::int64_t(h) * w;
    const std::int64_t m = std::int64_t(n) * hw;

    Tensor out = detail::make_result(x.shape(), {x, gamma, beta});
    auto mean = std::make_shared<std::vector<float>>(std::size_t(c));
    auto invstd = std::make_shared<std::vector<float>>(std::size_t(c));
    for (int ch = 0; ch < c; ++ch) {
        float mu, var;
        if (training) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                const float* xs = x.data() + (std::int64_t(i) * c + ch) * hw;
                for (std::int64_t p = 0; p < hw; ++p) s += xs[p];
            }
            mu = float(s / double(m));
            double v = 0.0;
            for (int i = 0; i < n; ++i) {
                const float* xs = x.data() + (std::int64_t(i) * c + ch) * hw;
                for (std::int64_t p = 0; p < hw; ++p) {
                    const double d = xs[p] - mu;
                    v += d * d;
                }
            }
            var = float(v / double(m));
            running_mean[ch] = (1.0f - momentum) * running_mean[ch] + momentum * mu;
            running_var[ch] = (1.0f - momentum) * running_var[ch] + momentum * var;
        } else {
            mu = running_mean[ch];
            var = running_var[ch];
        }
        (*mean)[ch] = mu;
        (*invstd)[ch] = 1.0f / std::sqrt(var + eps);
        const float g = gamma.data()[ch], b = beta.data()[ch], is = (*invstd)[ch];
        for (int i = 0; i < n; ++i) {
            const float* xs = x.data() + (std::int64_t(i) * c + ch) * hw;
            float* os = out.data() + (std::int64_t(i) * c + ch) * hw;
            for (std::int64_t p = 0; p < hw; ++p) os[p] = g * (xs[p] - mu) * is + b;
        }
    }

    if (detail::track(out)) {
        auto self = out.node().get();
        auto xn = x.node(), gn = gamma.node(), bn = beta.node();
        self->backprop = [self, xn, gn, bn, mean, invstd, n, c, hw, m, training] {
            if (xn->requires_grad) xn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const float mu = (*mean)[ch], is = (*invstd)[ch], g = gn->value[ch];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int i = 0; i < n; ++i) {
                    const std::int64_t off = (std::int64_t(i) * c + ch) * hw;
                    const float* dy = self->grad.data() + off;
                    const float* xs = xn->value.data() + off;
                    for (std::int64_t p = 0; p < hw; ++p) {
                        sum_dy += dy[p];
                        sum_dy_xhat += double(dy[p]) * (xs[p] - mu) * is;
                    }
                }
                if (gn->requires_grad) gn->grad[ch] += float(sum_dy_xhat);
                if (bn->requires_grad) bn->grad[ch] += float(sum_dy);
                if (!xn->requires_grad) continue;
                if (training) {
                    const float k1 = float(sum_dy / double(m));
                    const float k2 = float(sum_dy_xhat / double(m));
                    for (int i = 0; i < n; ++i) {
                        const std::int64_t off = (std::int64_t(i) * c + ch) * hw;
                        const float* dy = self->grad.data() + off;
                        const float* xs = xn->value.data() + off;
                        float* dx = xn->grad.data() + off;
                        for (std::int64_t p = 0; p < hw; ++p) {
                            const float xhat = (xs[p] - mu) * is;
                            dx[p] += g * is * (dy[p] - k1 - xhat * k2);
                        }
                    }
                } else {
                    for (int i = 0; i < n; ++i) {
                        const std::int64_t off = (std::int64_t(i) * c + ch) * hw;
                        const float* dy = self->grad.data() + off;
                        float* dx = xn->grad.data() + off;
                        for (std::int64_t p = 0; p < hw; ++p) dx[p] += g * is * dy[p];
                    }
                }
            }
        };
    }
    return out;
}

inline Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad) {
    detail::check_shape(x.shape().size() == 4, "max_pool input must be NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = (h + 2 * pad - kernel) / stride + 1;
    const int ow = (w + 2 * pad - kernel) / stride + 1;
    Tensor out = detail::make_result({n, c, oh, ow}, {x});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.values().size());
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const float* xs = x.data() + (std::int64_t(i) * c + ch) * h * w;
            const std::int64_t obase = (std::int64_t(i) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::int32_t best_idx = -1;
                    for (int ky = 0; ky < kernel; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            const float v = xs[std::int64_t(iy) * w + ix];
                            if (v > best) {
                                best = v;
                                best_idx = std::int32_t(iy * w + ix);
                            }
                        }
                    }
                    out.data()[obase + std::int64_t(oy) * ow + ox] = best;
                    (*argmax)[std::size_t(obase + std::int64_t(oy) * ow + ox)] = best_idx;
                }
        }
    if (detail::track(out)) {
        auto self = out.node().get();
        auto xn = x.node();
        const std::int64_t hw = std::int64_t(h) * w, ohw = std::int64_t(oh) * ow;
        self->backprop = [self, xn, argmax, n, c, hw, ohw] {
            xn->ensure_grad();
            for (std::int64_t plane = 0; plane < std::int64_t(n) * c; ++plane) {
                const float* dy = self->grad.data() + plane * ohw;
                float* dx = xn->grad.data() + plane * hw;
                const std::int32_t* am = argmax->data() + plane * ohw;
                for (std::int64_t p = 0; p < ohw; ++p)
                    if (am[p] >= 0) dx[am[p]] += dy[p];
            }
        };
    }
    return out;
}

/// Bilinear upsampling with half-pixel centers.
inline Tensor upsample_bilinear(const Tensor& x, int oh, int ow) {
    detail::check_shape(x.shape().size() == 4, "upsample input must be NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (oh == h && ow == w) return x;
    Tensor out = detail::make_result({n, c, oh, ow}, {x});
    const float sy = float(h) / float(oh), sx = float(w) / float(ow);

    struct Lerp { int i0, i1; float f; };
    std::vector<Lerp> ly(oh), lx(ow);
    auto fill = [](std::vector<Lerp>& v, int out_n, int in_n, float s) {
        for (int o = 0; o < out_n; ++o) {
            float src = (float(o) + 0.5f) * s - 0.5f;
            src = std::clamp(src, 0.0f, float(in_n - 1));
            const int i0 = int(src);
            v[std::size_t(o)] = {i0, std::min(i0 + 1, in_n - 1), src - float(i0)};
        }
    };
    fill(ly, oh, h, sy);
    fill(lx, ow, w, sx);

    for (std::int64_t plane = 0; plane < std::int64_t(n) * c; ++plane) {
        const float* xs = x.data() + plane * h * w;
        float* os = out.data() + plane * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const auto& Y = ly[std::size_t(oy)];
            const float* r0 = xs + std::int64_t(Y.i0) * w;
            const float* r1 = xs + std::int64_t(Y.i1) * w;
            float* dst = os + std::int64_t(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
                const auto& X = lx[std::size_t(ox)];
                const float top = r0[X.i0] + (r0[X.i1] - r0[X.i0]) * X.f;
                const float bot = r1[X.i0] + (r1[X.i1] - r1[X.i0]) * X.f;
                dst[ox] = top + (bot - top) * Y.f;
            }
        }
    }
    if (detail::track(out)) {
        auto self = out.node().get();
        auto xn = x.node();
        auto lyp = std::make_shared<std::vector<Lerp>>(std::move(ly));
        auto lxp = std::make_shared<std::vector<Lerp>>(std::move(lx));
        self->backprop = [self, xn, lyp, lxp, n, c, h, w, oh, ow] {
            xn->ensure_grad();
            for (std::int64_t plane = 0; plane < std::int64_t(n) * c; ++plane) {
                const float* dy = self->grad.data() + plane * oh * ow;
                float* dx = xn->grad.data() + plane * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    const auto& Y = (*lyp)[std::size_t(oy)];
                    for (int ox = 0; ox < ow; ++ox) {
                        const auto& X = (*lxp)[std::size_t(ox)];
                        const float g = dy[std::int64_t(oy) * ow + ox];
                        dx[std::int64_t(Y.i0) * w + X.i0] += g * (1 - Y.f) * (1 - X.f);
                        dx[std::int64_t(Y.i0) * w + X.i1] += g * (1 - Y.f) * X.f;
                        dx[std::int64_t(Y.i1) * w + X.i0] += g * Y.f * (1 - X.f);
                        dx[std::int64_t(Y.i1) * w + X.i1] += g * Y.f * X.f;
                    }
                }
            }
        };
    }
    return out;
}

inline Tensor sum_all(const Tensor& a) {
    Tensor out = detail::make_result({1}, {a});
    double s = 0.0;
    for (float v : a.values()) s += v;
    out.data()[0] = float(s);
    if (detail::track(out)) {
        auto self = out.node().get();
        auto an = a.node();
        self->backprop = [self, an] {
            an->ensure_grad();
            const float g = self->grad[0];
            for (auto& v : an->grad) v += g;
        };
    }
    return out;
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0f / float(a.numel())); }

} // namespace vaff
