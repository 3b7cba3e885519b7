#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "vqarat/tensor.hpp"

namespace vqarat {

struct AdamState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n_params = 0, double lr_ = 2e-5)
        : m(n_params, 0.0), v(n_params, 0.0), lr(lr_) {}
};

// Standard Adam update with bias correction, in place.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw std::invalid_argument("adam_step: params/grads/state length mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

// Optimizer over a list of parameter tensors, one shared flat state.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, double lr) : params_(std::move(params)) {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        state_ = AdamState(n, lr);
        flat_p_.resize(n);
        flat_g_.resize(n);
    }

    // Optional global-norm gradient clipping before the update.
    void step(double clip_norm = 0.0) {
        std::size_t off = 0;
        for (auto& p : params_) {
            const auto& g = p.grad();
            std::copy(p.data().begin(), p.data().end(), flat_p_.begin() + off);
            std::copy(g.begin(), g.end(), flat_g_.begin() + off);
            off += p.size();
        }
        if (clip_norm > 0.0) {
            double sq = 0.0;
            for (double g : flat_g_) sq += g * g;
            double norm = std::sqrt(sq);
            if (norm > clip_norm) {
                double s = clip_norm / norm;
                for (double& g : flat_g_) g *= s;
            }
        }
        adam_step(flat_p_, flat_g_, state_);
        off = 0;
        for (auto& p : params_) {
            std::copy(flat_p_.begin() + off, flat_p_.begin() + off + p.size(), p.data().begin());
            off += p.size();
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void scale_grads(double s) {
        for (auto& p : params_)
            for (double& g : p.grad()) g *= s;
    }

    const AdamState& state() const { return state_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
    std::vector<double> flat_p_, flat_g_;
};

}  // namespace vqarat
