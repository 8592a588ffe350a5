#pragma once

// Adam with bias correction. Holds first/second moment buffers per parameter
// and zeroes gradients after applying a step, so each training step starts
// from clean accumulators.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace flowhunter {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0.0)) throw TensorError("adam: learning rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw TensorError("adam: betas must lie in [0,1)");
        }
        if (!(eps > 0.0)) throw TensorError("adam: eps must be positive");
    }
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    std::int64_t steps() const { return t_; }
    const std::vector<Tensor>& params() const { return params_; }
    const AdamConfig& config() const { return cfg_; }

    // One update over all parameters; every parameter must carry a gradient.
    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) {
                const auto& name = params_[i].name();
                throw TensorError("adam: parameter #" + std::to_string(i) +
                                  (name.empty() ? "" : " (" + name + ")") +
                                  " has no gradient; run backward first");
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            const auto& g = *p.grad_if();
            auto& m = m_[i];
            auto& v = v_[i];
            double* w = p.data();
            for (std::size_t j = 0; j < g.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
            p.ensure_finite("adam");
            p.zero_grad();
        }
    }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

} // namespace flowhunter
