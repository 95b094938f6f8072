// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "vaff/tensor.hpp"

namespace vaff {

enum class InitKind { random, xavier, he };

inline const char* to_string(InitKind k) {
    switch (k) {
        case InitKind::random: return "random";
        case InitKind::xavier: return "xavier";
        default: return "he";
    }
}
inline InitKind init_kind_from_string(const std::string& s) {
    if (s == "random") return InitKind::random;
    if (s == "xavier") return InitKind::xavier;
    if (s == "he") return InitKind::he;
    throw Error("config error: unknown init kind '" + s + "'");
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};
/// Non-learnable state (batch-norm running statistics).
struct NamedBuffer {
    std::string name;
    std::vector<float>* data;
};

inline Tensor init_conv_weight(int c_out, int c_in, int k, InitKind kind, Rng& rng) {
    std::vector<float> w(std::size_t(c_out) * c_in * k * k);
    const double fan_in = double(c_in) * k * k;
    const double fan_out = double(c_out) * k * k;
    switch (kind) {
        case InitKind::random:
            for (auto& v : w) v = float(rng.normal(0.0, 0.01));
            break;
        case InitKind::xavier: {
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& v : w) v = float(rng.uniform(-bound, bound));
            break;
        }
        case InitKind::he:
            for (auto& v : w) v = float(rng.normal(0.0, std::sqrt(2.0 / fan_in)));
            break;
    }
    return Tensor::from(std::move(w), {c_out, c_in, k, k}, true);
}

struct Conv2d {
    Tensor weight, bias;
    int stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(int c_in, int c_out, int k, int stride_, int pad_, Rng& rng,
           InitKind kind = InitKind::he, bool with_bias = true)
        : weight(init_conv_weight(c_out, c_in, k, kind, rng)), stride(stride_), pad(pad_) {
        if (with_bias) bias = Tensor::zeros({c_out}, true);
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params) {
        params.push_back({prefix + ".weight", weight});
        if (bias.defined()) params.push_back({prefix + ".bias", bias});
    }
};

struct BatchNorm2d {
    Tensor gamma, beta;
    std::vector<float> running_mean, running_var;
    float momentum = 0.1f;
    float eps = 1e-5f;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels)
        : gamma(Tensor::filled({channels}, 1.0f, true)),
          beta(Tensor::zeros({channels}, true)),
          running_mean(std::size_t(channels), 0.0f),
          running_var(std::size_t(channels), 1.0f) {}

    Tensor operator()(const Tensor& x, bool training) {
        return batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        params.push_back({prefix + ".gamma", gamma});
        params.push_back({prefix + ".beta", beta});
        buffers.push_back({prefix + ".running_mean", &running_mean});
        buffers.push_back({prefix + ".running_var", &running_var});
    }
};

struct ConvBnRelu {
    Conv2d conv;
    BatchNorm2d bn;

    ConvBnRelu() = default;
    ConvBnRelu(int c_in, int c_out, int k, int stride, int pad, Rng& rng,
               InitKind kind = InitKind::he)
        : conv(c_in, c_out, k, stride, pad, rng, kind, false), bn(c_out) {}

    Tensor operator()(const Tensor& x, bool training) { return relu(bn(conv(x), training)); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        conv.collect(prefix + ".conv", params);
        bn.collect(prefix + ".bn", params, buffers);
    }
};

/// Two 3x3 convolutions with a projected shortcut on stride/width changes.
struct BasicResBlock {
    Conv2d conv1, conv2, skip_conv;
    BatchNorm2d bn1, bn2, skip_bn;
    bool projected = false;

    BasicResBlock() = default;
    BasicResBlock(int c_in, int c_out, int stride, Rng& rng)
        : conv1(c_in, c_out, 3, stride, 1, rng, InitKind::he, false),
          conv2(c_out, c_out, 3, 1, 1, rng, InitKind::he, false),
          bn1(c_out), bn2(c_out) {
        projected = stride != 1 || c_in != c_out;
        if (projected) {
            skip_conv = Conv2d(c_in, c_out, 1, stride, 0, rng, InitKind::he, false);
            skip_bn = BatchNorm2d(c_out);
        }
    }

    Tensor operator()(const Tensor& x, bool training) {
        Tensor y = relu(bn1(conv1(x), training));
        y = bn2(conv2(y), training);
        Tensor identity = projected ? skip_bn(skip_conv(x), training) : x;
        return relu(add(y, identity));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        conv1.collect(prefix + ".conv1", params);
        bn1.collect(prefix + ".bn1", params, buffers);
        conv2.collect(prefix + ".conv2", params);
        bn2.collect(prefix + ".bn2", params, buffers);
        if (projected) {
            skip_conv.collect(prefix + ".skip_conv", params);
            skip_bn.collect(prefix + ".skip_bn", params, buffers);
        }
    }
};

/// ResNet bottleneck: 1x1 reduce, 3x3 (carries the stride), 1x1 expand.
struct Bottleneck {
    Conv2d conv1, conv2, conv3, skip_conv;
    BatchNorm2d bn1, bn2, bn3, skip_bn;
    bool projected = false;

    Bottleneck() = default;
    Bottleneck(int c_in, int c_mid, int c_out, int stride, Rng& rng)
        : conv1(c_in, c_mid, 1, 1, 0, rng, InitKind::he, false),
          conv2(c_mid, c_mid, 3, stride, 1, rng, InitKind::he, false),
          conv3(c_mid, c_out, 1, 1, 0, rng, InitKind::he, false),
          bn1(c_mid), bn2(c_mid), bn3(c_out) {
        projected = stride != 1 || c_in != c_out;
        if (projected) {
            skip_conv = Conv2d(c_in, c_out, 1, stride, 0, rng, InitKind::he, false);
            skip_bn = BatchNorm2d(c_out);
        }
    }

    Tensor operator()(const Tensor& x, bool training) {
        Tensor y = relu(bn1(conv1(x), training));
        y = relu(bn2(conv2(y), training));
        y = bn3(conv3(y), training);
        Tensor identity = projected ? skip_bn(skip_conv(x), training) : x;
        return relu(add(y, identity));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        conv1.collect(prefix + ".conv1", params);
        bn1.collect(prefix + ".bn1", params, buffers);
        conv2.collect(prefix + ".conv2", params);
        bn2.collect(prefix + ".bn2", params, buffers);
        conv3.collect(prefix + ".conv3", params);
        bn3.collect(prefix + ".bn3", params, buffers);
        if (projected) {
            skip_conv.collect(prefix + ".skip_conv", params);
            skip_bn.collect(prefix + ".skip_bn", params, buffers);
        }
    }
};

inline std::int64_t param_count(const std::vector<NamedTensor>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

} // namespace vaff
