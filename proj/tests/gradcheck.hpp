#pragma once

// Central finite-difference oracle for reverse-mode gradients. The oracle
// only ever evaluates the forward pass (no tape), so it is independent of
// the backward implementation it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "deepbayes/ops.hpp"
#include "deepbayes/tape.hpp"
#include "deepbayes/tensor.hpp"

namespace testutil {

inline double inf_norm(const deepbayes::Tensor& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        m = std::max(m, std::abs(t.at(i)));
    }
    return m;
}

// forward() must read the tensors behind `inputs` and return a scalar; it
// must be deterministic (re-seed any randomness internally per call).
// Returns the max over inputs of
//   ||g_ad - g_fd||_inf / max(1, ||g_ad||_inf, ||g_fd||_inf).
inline double gradcheck(const std::function<deepbayes::Tensor()>& forward,
                        const std::vector<deepbayes::Tensor*>& inputs,
                        double h = 1e-5) {
    using deepbayes::GradientTape;
    using deepbayes::Tensor;

    std::vector<Tensor> ad_grads;
    {
        GradientTape tape;
        for (Tensor* t : inputs) tape.watch(*t);
        const Tensor loss = forward();
        auto grads = tape.backward(loss);
        for (Tensor* t : inputs) ad_grads.push_back(grads.wrt(*t));
    }

    double worst = 0.0;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        Tensor* t = inputs[which];
        Tensor fd(t->shape());
        for (std::size_t i = 0; i < t->size(); ++i) {
            const double orig = t->data()[i];
            t->data()[i] = orig + h;
            const double up = forward().item();
            t->data()[i] = orig - h;
            const double down = forward().item();
            t->data()[i] = orig;
            fd.data()[i] = (up - down) / (2.0 * h);
        }
        Tensor diff(t->shape());
        for (std::size_t i = 0; i < diff.size(); ++i) {
            diff.data()[i] = ad_grads[which].at(i) - fd.at(i);
        }
        const double scale =
            std::max({1.0, inf_norm(ad_grads[which]), inf_norm(fd)});
        worst = std::max(worst, inf_norm(diff) / scale);
    }
    return worst;
}

}  // namespace testutil
