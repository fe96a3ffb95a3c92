#pragma once

#include <array>

#include "deepbayes/data.hpp"
#include "deepbayes/model.hpp"

namespace deepbayes {

// Analytic ring-projection generative classifier for the two-rings data:
// p(x|y) = N(x; mu_y, sigma^2 I) with mu_y the closest point to x on ring
// y, equal class priors. Logits are differentiable in x, so gradient
// attacks run against it directly.
class TwoRingsClassifier : public Classifier {
public:
    explicit TwoRingsClassifier(TwoRingsSpec spec);

    std::size_t input_dim() const override { return 2; }
    std::size_t class_count() const override { return 2; }
    bool has_density() const override { return true; }
    std::string kind() const override { return "two_rings"; }
    const TwoRingsSpec& spec() const { return spec_; }

    // k and rng are unused: the model is deterministic.
    Tensor class_logits(const Tensor& x, std::size_t k,
                        RngStream& rng) const override;

private:
    TwoRingsSpec spec_;
};

// Closest point to x on ring `cls`; x at the ring center uses the fixed
// direction (1,0) (a probability-zero input, any fixed choice works).
std::array<double, 2> ring_projection(const TwoRingsSpec& spec,
                                      const std::array<double, 2>& x,
                                      std::size_t cls);

}  // namespace deepbayes
