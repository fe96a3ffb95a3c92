#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepbayes/tensor.hpp"

namespace deepbayes {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction over a fixed-size parameter list. Moments are
// zero-initialized; step_count increments once per update. Updates are
// functional: params receive freshly allocated tensors, so checkpointed
// copies never alias the optimizer state.
class AdamState {
public:
    AdamState(const std::vector<Tensor>& params, AdamConfig config = {});

    // grads[i] is d loss / d params[i]; throws NumericError naming the
    // parameter index if a gradient is non-finite.
    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);

    std::int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::vector<Tensor> first_moment_;
    std::vector<Tensor> second_moment_;
    std::int64_t step_count_ = 0;
};

}  // namespace deepbayes
