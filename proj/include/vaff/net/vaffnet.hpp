// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vaff/data/types.hpp"
#include "vaff/net/encoder.hpp"
#include "vaff/net/output.hpp"

namespace vaff {

enum class Task { RV, FAZ, RVJ };
enum class FusionMode { VGM, MAX, MIN, AVG, SUM };

inline const char* to_string(FusionMode m) {
    switch (m) {
        case FusionMode::VGM: return "vgm";
        case FusionMode::MAX: return "max";
        case FusionMode::MIN: return "min";
        case FusionMode::AVG: return "avg";
        default: return "sum";
    }
}
inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "vgm") return FusionMode::VGM;
    if (s == "max") return FusionMode::MAX;
    if (s == "min") return FusionMode::MIN;
    if (s == "avg") return FusionMode::AVG;
    if (s == "sum") return FusionMode::SUM;
    throw Error("config error: unknown fusion mode '" + s + "'");
}

/// Task-specific sigmoid gate over the three encoders, computed from the
/// concatenated first-layer activations.
struct GateMap {
    Tensor gate; // [N, 3, H, W], values in (0,1)
    Task task = Task::RV;
};

struct TaskFeatureMap {
    Tensor features; // [N, n_ch, H, W]
    Task task = Task::RV;
};

/// Voting gate module: three 3x3 conv-BN-ReLU blocks on the concatenated
/// stem outputs, then a 3-channel sigmoid convolution.
struct VotingGateModule {
    ConvBnRelu b1, b2, b3;
    Conv2d out_conv;

    VotingGateModule() = default;
    VotingGateModule(int c_first, Rng& rng)
        : b1(3 * c_first, 32, 3, 1, 1, rng),
          b2(32, 32, 3, 1, 1, rng),
          b3(32, 32, 3, 1, 1, rng),
          out_conv(32, 3, 3, 1, 1, rng) {}

    Tensor operator()(const std::array<Tensor, 3>& first_layers, bool training) {
        Tensor x = concat_channels({first_layers[0], first_layers[1], first_layers[2]});
        x = b1(x, training);
        x = b2(x, training);
        x = b3(x, training);
        return sigmoid(out_conv(x));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        b1.collect(prefix + ".b1", params, buffers);
        b2.collect(prefix + ".b2", params, buffers);
        b3.collect(prefix + ".b3", params, buffers);
        out_conv.collect(prefix + ".out", params);
    }
};

/// Dense segmentation head: two conv-BN-ReLU blocks, 1-channel sigmoid conv.
struct SegHead {
    ConvBnRelu b1, b2;
    Conv2d out_conv;

    SegHead() = default;
    SegHead(int c_in, Rng& rng)
        : b1(c_in, 32, 3, 1, 1, rng), b2(32, 32, 3, 1, 1, rng), out_conv(32, 1, 3, 1, 1, rng) {}

    Tensor operator()(const Tensor& x, bool training) {
        return sigmoid(out_conv(b2(b1(x, training), training)));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        b1.collect(prefix + ".b1", params, buffers);
        b2.collect(prefix + ".b2", params, buffers);
        out_conv.collect(prefix + ".out", params);
    }
};

/// Junction head: full-resolution heatmap branch plus an S x S grid branch
/// reached by log2(cell_size) stride-2 convolutions.
struct JunctionHead {
    ConvBnRelu h1, h2;
    Conv2d heat_out;
    std::vector<ConvBnRelu> downs;
    Conv2d grid_out;
    int cell_size = 8;

    JunctionHead() = default;
    JunctionHead(int c_in, int cell, Rng& rng)
        : h1(c_in, 32, 3, 1, 1, rng),
          h2(32, 32, 3, 1, 1, rng),
          heat_out(32, 1, 3, 1, 1, rng),
          cell_size(cell) {
        int steps = 0;
        for (int c = cell; c > 1; c /= 2) {
            if (c % 2 != 0) throw Error("config error: cell_size must be a power of two");
            ++steps;
        }
        int ch = c_in;
        for (int i = 0; i < steps; ++i) {
            downs.emplace_back(ch, 32, 3, 2, 1, rng);
            ch = 32;
        }
        grid_out = Conv2d(ch, 4, 1, 1, 0, rng);
    }

    std::pair<Tensor, Tensor> operator()(const Tensor& x, bool training) {
        Tensor heat = sigmoid(heat_out(h2(h1(x, training), training)));
        Tensor g = x;
        for (auto& d : downs) g = d(g, training);
        return {heat, sigmoid(grid_out(g))};
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) {
        h1.collect(prefix + ".h1", params, buffers);
        h2.collect(prefix + ".h2", params, buffers);
        heat_out.collect(prefix + ".heat_out", params);
        for (std::size_t i = 0; i < downs.size(); ++i)
            downs[i].collect(prefix + ".down" + std::to_string(i), params, buffers);
        grid_out.collect(prefix + ".grid_out", params);
    }
};

/// Eq. 1 fusion plus the ablation reductions. VGM mode broadcasts gate
/// channel i over the n_ch channels of F_i and sums; the named reductions
/// ignore the gate.
inline TaskFeatureMap fuse(const GateMap& gate, const FusedFeatureSet& fs, FusionMode mode) {
    const auto& f = fs.features;
    Tensor m;
    switch (mode) {
        case FusionMode::VGM: {
            for (int i = 0; i < 3; ++i) {
                Tensor gi = slice_channels(gate.gate, i, 1);
                Tensor term = mul_channel_broadcast(gi, f[std::size_t(i)]);
                m = i == 0 ? term : add(m, term);
            }
            break;
        }
        case FusionMode::SUM: m = add(add(f[0], f[1]), f[2]); break;
        case FusionMode::AVG: m = scale(add(add(f[0], f[1]), f[2]), 1.0f / 3.0f); break;
        case FusionMode::MAX: m = vmax(vmax(f[0], f[1]), f[2]); break;
        case FusionMode::MIN: m = vmin(vmin(f[0], f[1]), f[2]); break;
    }
    return {m, gate.task};
}

/// Raw batched outputs (NCHW) used by the training loop.
struct BatchOutput {
    Tensor rv;      // [N,1,H,W]
    Tensor faz;     // [N,1,H,W]
    Tensor heatmap; // [N,1,H,W]
    Tensor grid;    // [N,4,S,S]
};

/// The full model: three weight-shared encoders (independent stems), one
/// voting gate per task, Eq. 1 fusion and three task heads.
class VaffNet {
public:
    VaffNet(const EncoderConfig& cfg, int cell_size = 8, std::uint64_t init_seed = 0)
        : cfg_(cfg), cell_size_(cell_size) {
        Rng rng(Rng(init_seed).derive(0x11e7, std::uint64_t(cfg.topology)).seed());
        trunk_ = EncoderTrunk(cfg.topology, cfg.n_ch, rng);
        for (int i = 0; i < 3; ++i)
            stems_[std::size_t(i)] =
                EncoderStem(trunk_.stem_channels(), cfg.first_layer_init[std::size_t(i)], rng);
        for (int i = 0; i < 3; ++i) vgm_[std::size_t(i)] = VotingGateModule(trunk_.stem_channels(), rng);
        rv_head_ = SegHead(cfg.n_ch, rng);
        faz_head_ = SegHead(cfg.n_ch, rng);
        rvj_head_ = JunctionHead(cfg.n_ch, cell_size, rng);
    }

    const EncoderConfig& config() const { return cfg_; }
    int cell_size() const { return cell_size_; }

    /// Routes the triplet through the three stems + shared trunk. single_ivc
    /// and triplicate modes replicate the first image to all encoder slots.
    FusedFeatureSet encode(const Tensor& ivc, const Tensor& svc, const Tensor& dvc,
                           bool training) {
        std::array<Tensor, 3> inputs = route_inputs(ivc, svc, dvc);
        for (const auto& t : inputs)
            for (float v : t.values())
                if (v < 0.0f || v > 1.0f)
                    throw Error("range error: encoder input not normalized to [0,1]");
        FusedFeatureSet fs;
        for (int i = 0; i < 3; ++i) {
            Tensor stem_out = stems_[std::size_t(i)](inputs[std::size_t(i)], training);
            fs.first_layer_outputs[std::size_t(i)] = stem_out;
            fs.features[std::size_t(i)] = trunk_.fused_features(stem_out, training);
        }
        return fs;
    }

    GateMap vgm_forward(const std::array<Tensor, 3>& first_layer_outputs, Task task,
                        bool training) {
        return {vgm_[std::size_t(task_index(task))](first_layer_outputs, training), task};
    }

    BatchOutput forward_batch(const Tensor& ivc, const Tensor& svc, const Tensor& dvc,
                              bool training, FusionMode mode = FusionMode::VGM) {
        FusedFeatureSet fs = encode(ivc, svc, dvc, training);
        auto task_features = [&](Task task) {
            GateMap gate;
            gate.task = task;
            if (mode == FusionMode::VGM) gate = vgm_forward(fs.first_layer_outputs, task, training);
            return fuse(gate, fs, mode).features;
        };
        BatchOutput out;
        out.rv = rv_head_(task_features(Task::RV), training);
        out.faz = faz_head_(task_features(Task::FAZ), training);
        auto [heat, grid] = rvj_head_(task_features(Task::RVJ), training);
        out.heatmap = heat;
        out.grid = grid;
        return out;
    }

    /// Evaluation-mode convenience on one triplet; deterministic.
    NetworkOutput run(const EnfaceTriplet& triplet, FusionMode mode = FusionMode::VGM) {
        if (!triplet.consistent()) throw Error("geometry error: triplet layers differ in size");
        NoGradGuard ng;
        const Tensor ivc = image_to_tensor(triplet.ivc);
        const Tensor svc = image_to_tensor(triplet.svc);
        const Tensor dvc = image_to_tensor(triplet.dvc);
        BatchOutput b = forward_batch(ivc, svc, dvc, /*training=*/false, mode);
        NetworkOutput out;
        out.rv_prob = plane_to_image(b.rv, 0);
        out.faz_prob = plane_to_image(b.faz, 0);
        out.rvj_heatmap = plane_to_image(b.heatmap, 0);
        out.rvj_grid = grid_tensor_to_target(b.grid, 0, cell_size_);
        return out;
    }

    static Tensor image_to_tensor(const FloatImage& img) {
        std::vector<float> v(img.pixels().begin(), img.pixels().end());
        return Tensor::from(std::move(v), {1, 1, img.height(), img.width()});
    }

    static FloatImage plane_to_image(const Tensor& t, int batch_index) {
        const int h = t.dim(2), w = t.dim(3);
        FloatImage img(h, w);
        std::copy_n(t.data() + std::int64_t(batch_index) * t.dim(1) * h * w,
                    std::size_t(h) * w, img.data());
        return img;
    }

    /// [N,4,S,S] activation slice -> row-major S x S x 4 cells.
    static GridTarget grid_tensor_to_target(const Tensor& t, int batch_index, int cell_size) {
        const int s = t.dim(2);
        GridTarget g{s, cell_size, std::vector<float>(std::size_t(s) * s * 4)};
        const std::int64_t plane = std::int64_t(s) * t.dim(3);
        const float* base = t.data() + std::int64_t(batch_index) * 4 * plane;
        for (int r = 0; r < s; ++r)
            for (int c = 0; c < s; ++c)
                for (int ch = 0; ch < 4; ++ch)
                    g.at(r, c, ch) = base[std::int64_t(ch) * plane + std::int64_t(r) * s + c];
        return g;
    }

    std::vector<NamedTensor> named_params() {
        std::vector<NamedTensor> params;
        std::vector<NamedBuffer> buffers;
        collect(params, buffers);
        return params;
    }
    std::vector<NamedBuffer> named_buffers() {
        std::vector<NamedTensor> params;
        std::vector<NamedBuffer> buffers;
        collect(params, buffers);
        return buffers;
    }

    /// Parameter list of encoder i as a reader would see it: its stem plus
    /// the (shared) trunk. Used by the weight-sharing checks.
    std::vector<NamedTensor> encoder_parameters(int i) {
        std::vector<NamedTensor> params;
        std::vector<NamedBuffer> buffers;
        stems_[std::size_t(i)].collect("stem", params, buffers);
        trunk_.collect("trunk", params, buffers);
        return params;
    }

    std::vector<NamedTensor> stem_parameters(int i) {
        std::vector<NamedTensor> params;
        std::vector<NamedBuffer> buffers;
        stems_[std::size_t(i)].collect("stem" + std::to_string(i), params, buffers);
        return params;
    }

    void zero_grad() {
        for (auto& p : named_params()) p.tensor.zero_grad();
    }

    std::int64_t parameter_count() { return param_count(named_params()); }

private:
    static int task_index(Task t) { return int(t); }

    std::array<Tensor, 3> route_inputs(const Tensor& ivc, const Tensor& svc, const Tensor& dvc) {
        switch (cfg_.input_mode) {
            case InputMode::multi_enface: return {ivc, svc, dvc};
            case InputMode::single_ivc:
            case InputMode::triplicate: return {ivc, ivc, ivc};
        }
        throw Error("config error: bad input mode");
    }

    void collect(std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers) {
        for (int i = 0; i < 3; ++i)
            stems_[std::size_t(i)].collect("stem" + std::to_string(i), params, buffers);
        trunk_.collect("trunk", params, buffers);
        static const char* task_names[3] = {"rv", "faz", "rvj"};
        for (int i = 0; i < 3; ++i)
            vgm_[std::size_t(i)].collect(std::string("vgm.") + task_names[i], params, buffers);
        rv_head_.collect("head.rv", params, buffers);
        faz_head_.collect("head.faz", params, buffers);
        rvj_head_.collect("head.rvj", params, buffers);
    }

    EncoderConfig cfg_;
    int cell_size_ = 8;
    std::array<EncoderStem, 3> stems_;
    EncoderTrunk trunk_;
    std::array<VotingGateModule, 3> vgm_;
    SegHead rv_head_, faz_head_;
    JunctionHead rvj_head_;
};

} // namespace vaff
