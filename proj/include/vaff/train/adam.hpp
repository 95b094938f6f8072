// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vaff/net/layers.hpp"

namespace vaff {

/// Adam with the usual recommended parameters.
struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    explicit Adam(std::vector<NamedTensor> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor.values().size(), 0.0f);
            v_[i].assign(params_[i].tensor.values().size(), 0.0f);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].tensor;
            const auto& g = p.node()->grad;
            if (g.empty()) continue; // parameter not on the loss path this step
            float* w = p.data();
            float* m = m_[i].data();
            float* v = v_[i].data();
            const float b1 = float(cfg_.beta1), b2 = float(cfg_.beta2);
            for (std::size_t k = 0; k < g.size(); ++k) {
                m[k] = b1 * m[k] + (1.0f - b1) * g[k];
                v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
                const double mhat = double(m[k]) / bc1;
                const double vhat = double(v[k]) / bc2;
                w[k] -= float(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    std::int64_t steps() const { return t_; }

    /// Flat state blob (step count plus first/second moments in parameter order).
    std::vector<float> serialize() const {
        std::vector<float> out;
        out.push_back(float(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out.insert(out.end(), m_[i].begin(), m_[i].end());
            out.insert(out.end(), v_[i].begin(), v_[i].end());
        }
        return out;
    }
    void deserialize(const std::vector<float>& in) {
        std::size_t need = 1;
        for (const auto& m : m_) need += 2 * m.size();
        if (in.size() != need) throw Error("incompatible checkpoint: optimizer state size");
        t_ = std::int64_t(in[0]);
        std::size_t off = 1;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::copy_n(in.begin() + long(off), m_[i].size(), m_[i].begin());
            off += m_[i].size();
            std::copy_n(in.begin() + long(off), v_[i].size(), v_[i].begin());
            off += v_[i].size();
        }
    }

private:
    std::vector<NamedTensor> params_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
    AdamConfig cfg_;
};

} // namespace vaff
