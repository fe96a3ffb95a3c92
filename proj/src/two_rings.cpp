#include "deepbayes/two_rings.hpp"

#include <cmath>
#include <numbers>

#include "deepbayes/errors.hpp"
#include "deepbayes/ops.hpp"

namespace deepbayes {

TwoRingsClassifier::TwoRingsClassifier(TwoRingsSpec spec) : spec_(spec) {
    spec_.validate();
    if (spec_.noise_std <= 0.0) {
        throw ConfigError("TwoRingsClassifier: noise std must be positive");
    }
}

Tensor TwoRingsClassifier::class_logits(const Tensor& x, std::size_t,
                                        RngStream&) const {
    if (x.rank() != 2 || x.dim(1) != 2) {
        throw ShapeError("TwoRingsClassifier: inputs must be [N,2], got " +
                         x.shape_str());
    }
    const double var = spec_.noise_var();
    // log N(x; mu_y, var I) in 2-D collapses to -(d - r)^2 / (2 var) plus
    // the normalizer, with d the distance of x to the ring center; this
    // also covers x exactly at the center (d = 0), where the projection
    // direction is fixed but the residual distance is still r.
    const double norm_const = -std::log(2.0 * std::numbers::pi * var);
    const double log_prior = std::log(0.5);
    const std::array<std::array<double, 2>, 2> centers = {spec_.center0,
                                                          spec_.center1};
    const std::array<double, 2> radii = {spec_.radius0, spec_.radius1};
    std::vector<Tensor> per_class;
    for (std::size_t cls = 0; cls < 2; ++cls) {
        const Tensor center =
            Tensor({2}, {centers[cls][0], centers[cls][1]});
        const Tensor dist = sqrt(sum_last(square(sub(x, center))));
        const Tensor resid = sub(dist, Tensor::scalar(radii[cls]));
        per_class.push_back(
            add(mul(Tensor::scalar(-0.5 / var), square(resid)),
                Tensor::scalar(norm_const + log_prior)));
    }
    return stack_last(per_class);
}

std::array<double, 2> ring_projection(const TwoRingsSpec& spec,
                                      const std::array<double, 2>& x,
                                      std::size_t cls) {
    const std::array<double, 2> c = cls == 0 ? spec.center0 : spec.center1;
    const double r = cls == 0 ? spec.radius0 : spec.radius1;
    const double dx = x[0] - c[0];
    const double dy = x[1] - c[1];
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d == 0.0) return {c[0] + r, c[1]};
    return {c[0] + r * dx / d, c[1] + r * dy / d};
}

}  // namespace deepbayes
