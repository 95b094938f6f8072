// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>

#include "vaff/net/layers.hpp"

namespace vaff {

enum class Topology { resnet50, reduced };
enum class InputMode { multi_enface, single_ivc, triplicate };

inline const char* to_string(Topology t) { return t == Topology::resnet50 ? "resnet50" : "reduced"; }
inline Topology topology_from_string(const std::string& s) {
    if (s == "resnet50") return Topology::resnet50;
    if (s == "reduced") return Topology::reduced;
    throw Error("config error: unknown topology '" + s + "'");
}
inline const char* to_string(InputMode m) {
    switch (m) {
        case InputMode::multi_enface: return "multi";
        case InputMode::single_ivc: return "single";
        default: return "triplicate";
    }
}
inline InputMode input_mode_from_string(const std::string& s) {
    if (s == "multi" || s == "multi_enface") return InputMode::multi_enface;
    if (s == "single" || s == "single_ivc") return InputMode::single_ivc;
    if (s == "triplicate") return InputMode::triplicate;
    throw Error("config error: unknown input mode '" + s + "'");
}

struct EncoderConfig {
    Topology topology = Topology::resnet50;
    int n_ch = 64;
    InputMode input_mode = InputMode::multi_enface;
    std::array<InitKind, 3> first_layer_init{InitKind::random, InitKind::random, InitKind::random};

    /// The ensemble setup for identical inputs: one stem per init strategy.
    static std::array<InitKind, 3> triplicate_inits() {
        return {InitKind::random, InitKind::xavier, InitKind::he};
    }
};

/// Per-encoder first convolutional block (the only unshared parameters).
/// A 3x3 same-padding convolution keeps the output at input resolution.
struct EncoderStem {
    Conv2d conv;
    BatchNorm2d bn;

    EncoderStem() = default;
    EncoderStem(int c_out, InitKind kind, Rng& rng)
        : conv(1, c_out, 3, 1, 1, rng, kind, false), bn(c_out) {}

    Tensor operator()(const Tensor& x, bool training) { return relu(bn(conv(x), training)); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        conv.collect(prefix + ".conv", params);
        bn.collect(prefix + ".bn", params, buffers);
    }
};

/// Shared trunk: residual stages plus 1x1 projections feeding the multi-scale
/// fusion. Both topologies expose exactly three scale stages.
struct EncoderTrunk {
    Topology topology = Topology::reduced;
    int n_ch = 64;

    // reduced: three basic blocks at /2, /4, /8
    std::array<BasicResBlock, 3> reduced_stages;

    // resnet50: maxpool then bottleneck stages c2..c5; fusion taps c3, c4, c5
    std::vector<Bottleneck> c2, c3, c4, c5;

    std::array<Conv2d, 3> proj; // stage channels -> n_ch

    EncoderTrunk() = default;
    EncoderTrunk(Topology topo, int n_ch_, Rng& rng) : topology(topo), n_ch(n_ch_) {
        if (topology == Topology::reduced) {
            reduced_stages[0] = BasicResBlock(stem_channels(), 32, 2, rng);
            reduced_stages[1] = BasicResBlock(32, 64, 2, rng);
            reduced_stages[2] = BasicResBlock(64, 128, 2, rng);
            proj[0] = Conv2d(32, n_ch, 1, 1, 0, rng);
            proj[1] = Conv2d(64, n_ch, 1, 1, 0, rng);
            proj[2] = Conv2d(128, n_ch, 1, 1, 0, rng);
        } else {
            auto make_stage = [&](std::vector<Bottleneck>& stage, int blocks, int c_in, int c_mid,
                                  int c_out, int stride) {
                stage.emplace_back(c_in, c_mid, c_out, stride, rng);
                for (int i = 1; i < blocks; ++i) stage.emplace_back(c_out, c_mid, c_out, 1, rng);
            };
            make_stage(c2, 3, 64, 64, 256, 1);
            make_stage(c3, 4, 256, 128, 512, 2);
            make_stage(c4, 6, 512, 256, 1024, 2);
            make_stage(c5, 3, 1024, 512, 2048, 2);
            proj[0] = Conv2d(512, n_ch, 1, 1, 0, rng);
            proj[1] = Conv2d(1024, n_ch, 1, 1, 0, rng);
            proj[2] = Conv2d(2048, n_ch, 1, 1, 0, rng);
        }
    }

    int stem_channels() const { return topology == Topology::reduced ? 16 : 64; }

    /// Multi-scale fused map at input resolution: each stage output is
    /// projected to n_ch, bilinearly upsampled, and summed.
    Tensor fused_features(const Tensor& stem_out, bool training) {
        const int h = stem_out.dim(2), w = stem_out.dim(3);
        std::array<Tensor, 3> stages;
        if (topology == Topology::reduced) {
            Tensor s = stem_out;
            for (int i = 0; i < 3; ++i) {
                s = reduced_stages[std::size_t(i)](s, training);
                stages[std::size_t(i)] = s;
            }
        } else {
            Tensor s = max_pool2d(stem_out, 3, 2, 1);
            for (auto& b : c2) s = b(s, training);
            for (auto& b : c3) s = b(s, training);
            stages[0] = s;
            for (auto& b : c4) s = b(s, training);
            stages[1] = s;
            for (auto& b : c5) s = b(s, training);
            stages[2] = s;
        }
        Tensor fused;
        for (int i = 0; i < 3; ++i) {
            Tensor p = upsample_bilinear(proj[std::size_t(i)](stages[std::size_t(i)]), h, w);
            fused = i == 0 ? p : add(fused, p);
        }
        return fused;
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        if (topology == Topology::reduced) {
            for (int i = 0; i < 3; ++i)
                reduced_stages[std::size_t(i)].collect(prefix + ".stage" + std::to_string(i + 1),
                                                       params, buffers);
        } else {
            auto stage = [&](std::vector<Bottleneck>& blocks, const std::string& name) {
                for (std::size_t i = 0; i < blocks.size(); ++i)
                    blocks[i].collect(prefix + "." + name + "." + std::to_string(i), params,
                                      buffers);
            };
            stage(c2, "c2");
            stage(c3, "c3");
            stage(c4, "c4");
            stage(c5, "c5");
        }
        for (int i = 0; i < 3; ++i)
            proj[std::size_t(i)].collect(prefix + ".proj" + std::to_string(i), params);
    }
};

/// Eq. 1 inputs: per-encoder fused maps plus the full-resolution first-layer
/// activations the voting gates consume.
struct FusedFeatureSet {
    std::array<Tensor, 3> features;            // F_1..F_3, each [N, n_ch, H, W]
    std::array<Tensor, 3> first_layer_outputs; // [N, c_first, H, W]
};

} // namespace vaff
