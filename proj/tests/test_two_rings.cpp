#include <doctest.h>

#include <cmath>
#include <numbers>

#include "deepbayes/ops.hpp"
#include "deepbayes/two_rings.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace deepbayes;

TEST_CASE("radial geometry of the ring projection") {
    TwoRingsSpec spec;
    spec.center0 = {0.5, -0.25};
    spec.radius0 = 1.5;
    RngStream rng(1);
    for (int i = 0; i < 10; ++i) {
        const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const std::array<double, 2> u = {std::cos(theta), std::sin(theta)};
        const std::array<double, 2> x = {
            spec.center0[0] + 2.0 * spec.radius0 * u[0],
            spec.center0[1] + 2.0 * spec.radius0 * u[1]};
        const std::array<double, 2> mu = ring_projection(spec, x, 0);
        CHECK(mu[0] ==
              doctest::Approx(spec.center0[0] + spec.radius0 * u[0])
                  .epsilon(1e-12));
        CHECK(mu[1] ==
              doctest::Approx(spec.center0[1] + spec.radius0 * u[1])
                  .epsilon(1e-12));
    }
}

TEST_CASE("projection beats a dense grid search") {
    TwoRingsSpec spec;
    spec.center1 = {0.3, 0.7};
    RngStream rng(2);
    for (int i = 0; i < 15; ++i) {
        const std::array<double, 2> x = {rng.uniform(-3.0, 3.0),
                                         rng.uniform(-3.0, 3.0)};
        for (std::size_t cls = 0; cls < 2; ++cls) {
            const auto mu = ring_projection(spec, x, cls);
            const auto grid =
                testutil::ring_projection_grid(spec, x, cls, 100000);
            const double d_mu = std::hypot(x[0] - mu[0], x[1] - mu[1]);
            const double d_grid =
                std::hypot(x[0] - grid[0], x[1] - grid[1]);
            CHECK(d_mu <= d_grid + 1e-6);
        }
    }
}

TEST_CASE("degenerate center input uses the fixed direction") {
    TwoRingsSpec spec;
    const auto mu = ring_projection(spec, {0.0, 0.0}, 1);
    CHECK(mu[0] == doctest::Approx(spec.radius1));
    CHECK(mu[1] == 0.0);
}

TEST_CASE("equal residuals with equal priors give a 0.5 posterior") {
    TwoRingsSpec spec;  // concentric radii 1 and 2
    TwoRingsClassifier model(spec);
    const Tensor x({1, 2}, {1.5, 0.0});  // |d-1| = |d-2| = 0.5
    RngStream rng(0);
    const Prediction pred = predict(model, x, 1, rng);
    CHECK(pred.posterior.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pred.posterior.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("on-ring points are classified with near-certainty") {
    TwoRingsSpec spec;
    TwoRingsClassifier model(spec);
    const Tensor x({1, 2}, {1.0, 0.0});  // exactly on ring 0
    RngStream rng(0);
    const Prediction pred = predict(model, x, 1, rng);
    CHECK(pred.labels[0] == 0);
    CHECK(pred.posterior.at(0, 0) > 0.99);
}

TEST_CASE("analytic logits match the densities computed long-hand") {
    TwoRingsSpec spec;
    spec.center0 = {0.2, -0.4};
    spec.center1 = {-0.1, 0.3};
    spec.radius0 = 0.8;
    spec.radius1 = 1.9;
    spec.noise_std = 0.15;
    TwoRingsClassifier model(spec);
    RngStream rng(3);
    for (int i = 0; i < 20; ++i) {
        const std::array<double, 2> p = {rng.uniform(-3.0, 3.0),
                                         rng.uniform(-3.0, 3.0)};
        const Tensor x({1, 2}, {p[0], p[1]});
        RngStream r(0);
        const Tensor logits = model.class_logits(x, 1, r);
        CHECK(logits.at(0, 0) ==
              doctest::Approx(testutil::two_rings_log_joint_direct(spec, p, 0))
                  .epsilon(1e-12));
        CHECK(logits.at(0, 1) ==
              doctest::Approx(testutil::two_rings_log_joint_direct(spec, p, 1))
                  .epsilon(1e-12));
    }
}

TEST_CASE("prediction is equivariant under rigid rotation") {
    TwoRingsSpec spec;
    spec.center0 = {0.3, 0.1};
    spec.center1 = {-0.2, 0.4};
    TwoRingsClassifier model(spec);

    RngStream rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const std::array<double, 2> p = {rng.uniform(-3.0, 3.0),
                                         rng.uniform(-3.0, 3.0)};
        const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ct = std::cos(theta), st = std::sin(theta);
        auto rot = [&](const std::array<double, 2>& v) {
            return std::array<double, 2>{ct * v[0] - st * v[1],
                                         st * v[0] + ct * v[1]};
        };
        TwoRingsSpec rotated = spec;
        rotated.center0 = rot(spec.center0);
        rotated.center1 = rot(spec.center1);
        TwoRingsClassifier rotated_model(rotated);
        const std::array<double, 2> pr = rot(p);

        RngStream r(0);
        const std::size_t l1 =
            predict(model, Tensor({1, 2}, {p[0], p[1]}), 1, r).labels[0];
        const std::size_t l2 =
            predict(rotated_model, Tensor({1, 2}, {pr[0], pr[1]}), 1, r)
                .labels[0];
        CHECK(l1 == l2);
    }
}

TEST_CASE("analytic logits are differentiable in x") {
    TwoRingsSpec spec;
    TwoRingsClassifier model(spec);
    RngStream rng(5);
    Tensor x({2, 2}, {0.8, 0.4, -1.2, 1.7});
    RngStream dummy(0);
    const double err = testutil::gradcheck(
        [&] {
            RngStream r(0);
            return sum(model.class_logits(x, 1, r));
        },
        {&x});
    CHECK(err < 1e-5);
}
