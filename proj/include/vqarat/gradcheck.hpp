#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vqarat/tensor.hpp"

namespace vqarat {

// Compares reverse-mode gradients against central finite differences.
// `loss_fn` must rebuild its graph from the given leaves on every call and
// return a scalar. Returns the max relative error over all coordinates:
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
inline double grad_check(const std::function<Tensor(std::vector<Tensor>&)>& loss_fn,
                         std::vector<Tensor> leaves, double h = 1e-5) {
    std::vector<std::vector<double>> analytic;
    {
        for (auto& l : leaves) l.zero_grad();
        Tape tape;
        Tensor loss = loss_fn(leaves);
        tape.backward(loss);
        for (auto& l : leaves) analytic.push_back(l.grad());
    }
    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            double saved = leaf.data()[i];
            leaf.data()[i] = saved + h;
            double fp = loss_fn(leaves).item();
            leaf.data()[i] = saved - h;
            double fm = loss_fn(leaves).item();
            leaf.data()[i] = saved;
            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[li][i];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace vqarat
