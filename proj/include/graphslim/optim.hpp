#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "graphslim/tensor.hpp"

namespace graphslim {

struct AdamHyper {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// L2 penalty folded into the gradient before the moment updates.
    double weight_decay = 0.0;
};

struct AdamState {
    AdamHyper hyper;
    std::int64_t step = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;

    AdamState() = default;
    explicit AdamState(AdamHyper h) : hyper(h) {}
};

/// One bias-corrected Adam update, in place. Moments are created lazily on the first call.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace graphslim
