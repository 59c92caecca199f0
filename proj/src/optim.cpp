#include "graphslim/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace graphslim {

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: parameter and gradient counts differ");
    }
    if (state.first_moment.empty()) {
        for (const Tensor& p : params) {
            state.first_moment.emplace_back(p.rows(), p.cols());
            state.second_moment.emplace_back(p.rows(), p.cols());
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw std::invalid_argument("adam_step: state tracks a different parameter count");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].same_shape(grads[k]) || !params[k].same_shape(state.first_moment[k])) {
            throw std::invalid_argument("adam_step: shape mismatch for parameter " + std::to_string(k));
        }
    }

    const AdamHyper& h = state.hyper;
    ++state.step;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        const Tensor& g = grads[k];
        Tensor& m = state.first_moment[k];
        Tensor& v = state.second_moment[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] + h.weight_decay * p[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
        }
    }
}

}  // namespace graphslim
