#include "deepbayes/adam.hpp"

#include <cmath>

#include "deepbayes/errors.hpp"

namespace deepbayes {

AdamState::AdamState(const std::vector<Tensor>& params, AdamConfig config)
    : config_(config) {
    first_moment_.reserve(params.size());
    second_moment_.reserve(params.size());
    for (const Tensor& p : params) {
        first_moment_.push_back(Tensor::zeros(p.shape()));
        second_moment_.push_back(Tensor::zeros(p.shape()));
    }
}

void AdamState::step(std::vector<Tensor>& params,
                     const std::vector<Tensor>& grads) {
    if (params.size() != first_moment_.size() ||
        grads.size() != params.size()) {
        throw ShapeError("AdamState::step: parameter/gradient count mismatch");
    }
    ++step_count_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double corr1 =
        1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double corr2 =
        1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape()) {
            throw ShapeError("AdamState::step: parameter " +
                             std::to_string(i) + " shape " +
                             params[i].shape_str() + " vs gradient " +
                             grads[i].shape_str());
        }
        if (!grads[i].all_finite()) {
            throw NumericError("AdamState::step: non-finite gradient for "
                               "parameter " +
                               std::to_string(i));
        }
        Tensor updated(params[i].shape());
        const double* p = params[i].data();
        const double* g = grads[i].data();
        double* m = first_moment_[i].data();
        double* v = second_moment_[i].data();
        double* out = updated.data();
        for (std::size_t j = 0; j < updated.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double mhat = m[j] / corr1;
            const double vhat = v[j] / corr2;
            out[j] = p[j] - config_.learning_rate * mhat /
                                (std::sqrt(vhat) + config_.epsilon);
        }
        params[i] = updated;
    }
}

}  // namespace deepbayes
