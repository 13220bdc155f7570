#pragma once

#include <cmath>
#include <vector>

#include "autodiff.hpp"

namespace genodiff {

// Standard Adam with bias correction. A step with any non-finite gradient is
// skipped entirely and counted, so a single bad batch cannot poison the
// moment estimates.
template <class S>
class AdamT {
public:
    struct Config {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamT(std::vector<VarT<S>> params, Config cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (auto& p : params_) {
            m_.emplace_back(p.shape());
            v_.emplace_back(p.shape());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (auto& p : params_)
            if (!p.grad().all_finite()) {
                ++skipped_steps_;
                return;
            }
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& val = params_[i].value_mut();
            const auto& g = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (int64_t j = 0; j < val.numel(); ++j) {
                double gj = static_cast<double>(g[j]);
                double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
                double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<S>(mj);
                v[j] = static_cast<S>(vj);
                double mhat = mj / bc1;
                double vhat = vj / bc2;
                val[j] = static_cast<S>(static_cast<double>(val[j]) -
                                        cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
            if (!val.all_finite())
                throw NumericError("adam: parameter became non-finite after step " +
                                   std::to_string(t_));
        }
    }

    int64_t skipped_steps() const { return skipped_steps_; }
    int64_t steps_taken() const { return t_; }
    const Config& config() const { return cfg_; }

private:
    std::vector<VarT<S>> params_;
    Config cfg_;
    std::vector<TensorT<S>> m_, v_;
    int64_t t_ = 0;
    int64_t skipped_steps_ = 0;
};

using Adam = AdamT<double>;

template <class S>
class SgdT {
public:
    struct Config {
        double lr = 1e-2;
        double momentum = 0.0;
    };

    SgdT(std::vector<VarT<S>> params, Config cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        if (cfg_.momentum != 0.0)
            for (auto& p : params_) vel_.emplace_back(p.shape());
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (auto& p : params_)
            if (!p.grad().all_finite()) {
                ++skipped_steps_;
                return;
            }
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& val = params_[i].value_mut();
            const auto& g = params_[i].grad();
            for (int64_t j = 0; j < val.numel(); ++j) {
                double u = static_cast<double>(g[j]);
                if (cfg_.momentum != 0.0) {
                    double vj = cfg_.momentum * static_cast<double>(vel_[i][j]) + u;
                    vel_[i][j] = static_cast<S>(vj);
                    u = vj;
                }
                val[j] = static_cast<S>(static_cast<double>(val[j]) - cfg_.lr * u);
            }
            if (!val.all_finite()) throw NumericError("sgd: parameter became non-finite after step");
        }
    }

    int64_t skipped_steps() const { return skipped_steps_; }

private:
    std::vector<VarT<S>> params_;
    Config cfg_;
    std::vector<TensorT<S>> vel_;
    int64_t skipped_steps_ = 0;
};

using Sgd = SgdT<double>;

/*------------------------------- initialization --------------------------------*/

// Glorot-uniform for weight matrices/kernels; norms start at scale 1, biases 0.
inline Tensor glorot(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::rand_uniform(std::move(shape), rng, -bound, bound);
}

}  // namespace genodiff
