#include <doctest.h>

#include <cmath>

#include "deepbayes/errors.hpp"
#include "deepbayes/ops.hpp"
#include "deepbayes/tape.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace deepbayes;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngStream& rng,
                     double lo = -2.0, double hi = 2.0) {
    return Tensor(std::move(shape), rng.uniforms(shape_size(shape), lo, hi));
}

}  // namespace

TEST_CASE("softmax basics") {
    const Tensor s = softmax(Tensor::row({0.0, 0.0}));
    CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-12));

    // direct-summation oracle on a random 5-vector
    RngStream rng(11);
    const std::vector<double> v = rng.uniforms(5, -3.0, 3.0);
    const Tensor got = softmax(Tensor::row(std::vector<double>(v)));
    const std::vector<double> want = testutil::softmax_direct(v);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(std::abs(got.at(i) - want[i]) < 1e-12);
    }
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
    RngStream rng(3);
    const Tensor t = random_tensor({7, 9}, rng, -30.0, 30.0);
    const Tensor s = softmax(t);
    for (std::size_t r = 0; r < 7; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 9; ++c) {
            CHECK(s.at(r, c) >= 0.0);
            acc += s.at(r, c);
        }
        CHECK(std::abs(acc - 1.0) < 1e-12);
    }
}

TEST_CASE("log_sum_exp max-shift identity and bounds") {
    const Tensor big = log_sum_exp(Tensor::row({1000.0, 1000.0}));
    CHECK(big.item() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));

    RngStream rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const std::vector<double> v = rng.uniforms(n, -50.0, 50.0);
        double mx = v[0];
        for (double x : v) mx = std::max(mx, x);
        const double lse =
            log_sum_exp(Tensor::row(std::vector<double>(v))).item();
        CHECK(lse >= mx);
        CHECK(lse <= mx + std::log(static_cast<double>(n)) + 1e-12);
    }
}

TEST_CASE("clip stays in the interval and is idempotent") {
    RngStream rng(5);
    const Tensor t = random_tensor({64}, rng, -3.0, 3.0);
    const Tensor once = clip(t, -1.0, 1.0);
    const Tensor twice = clip(once, -1.0, 1.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(once.at(i) >= -1.0);
        CHECK(once.at(i) <= 1.0);
        CHECK(once.at(i) == twice.at(i));
    }
}

TEST_CASE("sign(0) = 0") {
    const Tensor s = sign(Tensor::row({-2.0, 0.0, 3.0}));
    CHECK(s.at(0) == -1.0);
    CHECK(s.at(1) == 0.0);
    CHECK(s.at(2) == 1.0);
}

TEST_CASE("shape mismatch raises a structured error naming both shapes") {
    const Tensor a({2, 3});
    const Tensor b({4, 5});
    CHECK_THROWS_WITH_AS(matmul(a, b),
                         doctest::Contains("matmul"), ShapeError);
    try {
        add(Tensor({3}), Tensor({4}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3]") != std::string::npos);
        CHECK(msg.find("[4]") != std::string::npos);
    }
}

TEST_CASE("broadcasting matches explicit expansion") {
    const Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor v({3}, {10, 20, 30});
    const Tensor s = add(m, v);
    CHECK(s.at(0, 0) == 11);
    CHECK(s.at(1, 2) == 36);
    const Tensor col = mul(m, Tensor({2, 1}, {2, 3}));
    CHECK(col.at(0, 2) == 6);
    CHECK(col.at(1, 0) == 12);
}

TEST_CASE("backward identity and square") {
    Tensor x = Tensor::scalar(7.0);
    {
        GradientTape tape;
        tape.watch(x);
        Tensor y = x + 0.0;
        auto grads = tape.backward(y);
        CHECK(grads.wrt(x).item() == 1.0);
    }
    Tensor x2 = Tensor::scalar(3.0);
    {
        GradientTape tape;
        tape.watch(x2);
        Tensor y = square(x2);
        auto grads = tape.backward(y);
        CHECK(grads.wrt(x2).item() == doctest::Approx(6.0).epsilon(1e-12));
    }
}

TEST_CASE("backward error paths") {
    Tensor x = Tensor::row({1.0, 2.0});
    {
        GradientTape tape;
        tape.watch(x);
        Tensor y = mul(x, x);
        CHECK_THROWS_AS((void)tape.backward(y), ShapeError);  // not scalar
    }
    {
        GradientTape tape;
        Tensor unrelated = Tensor::scalar(1.0);
        CHECK_THROWS_AS((void)tape.backward(unrelated), NumericError);
    }
}

TEST_CASE("gradient of a node with no path to the loss is exactly zero") {
    Tensor x = Tensor::scalar(2.0);
    Tensor unused = Tensor::scalar(5.0);
    GradientTape tape;
    tape.watch(x);
    tape.watch(unused);
    Tensor y = mul(x, x);
    auto grads = tape.backward(y);
    CHECK(grads.wrt(unused).item() == 0.0);
}

TEST_CASE("tape is consumed by backward") {
    Tensor x = Tensor::scalar(2.0);
    GradientTape tape;
    tape.watch(x);
    Tensor y = square(x);
    (void)tape.backward(y);
    CHECK_THROWS_AS((void)tape.backward(y), NumericError);
}

TEST_CASE("finite differences validate every differentiable primitive") {
    RngStream rng(2024);
    auto check = [&](const char* name, auto&& builder,
                     std::vector<Tensor*> inputs, double tol = 1e-5) {
        const double err = testutil::gradcheck(builder, inputs);
        INFO(name << " rel err " << err);
        CHECK(err < tol);
    };

    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        check("add", [&] { return sum(mul(add(a, b), b)); }, {&a, &b});
        check("sub", [&] { return sum(mul(sub(a, b), a)); }, {&a, &b});
        check("mul", [&] { return sum(mul(a, b)); }, {&a, &b});

        Tensor bc = random_tensor({4}, rng);
        check("broadcast add", [&] { return sum(square(add(a, bc))); },
              {&a, &bc});
        check("broadcast mul", [&] { return sum(square(mul(a, bc))); },
              {&a, &bc});

        Tensor denom = random_tensor({3, 4}, rng, 0.5, 2.0);
        check("div", [&] { return sum(div(a, denom)); }, {&a, &denom});

        Tensor m1 = random_tensor({2, 3}, rng);
        Tensor m2 = random_tensor({3, 5}, rng);
        check("matmul", [&] { return sum(square(matmul(m1, m2))); },
              {&m1, &m2});

        // Kinked ops: keep samples away from the kink by more than h.
        Tensor r = random_tensor({4, 4}, rng);
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (std::abs(r.data()[i]) < 1e-3) r.data()[i] = 0.5;
        }
        check("relu", [&] { return sum(square(relu(r))); }, {&r});
        check("abs", [&] { return sum(mul(abs(r), r)); }, {&r});

        Tensor e = random_tensor({3, 3}, rng, -1.5, 1.5);
        check("exp", [&] { return sum(exp(e)); }, {&e});
        check("tanh", [&] { return sum(tanh(e)); }, {&e});
        check("square", [&] { return sum(square(e)); }, {&e});

        Tensor pos = random_tensor({3, 3}, rng, 0.2, 2.0);
        check("log", [&] { return sum(log(pos)); }, {&pos});
        check("sqrt", [&] { return sum(sqrt(pos)); }, {&pos});

        Tensor cl = random_tensor({4, 4}, rng);
        for (std::size_t i = 0; i < cl.size(); ++i) {
            if (std::abs(std::abs(cl.data()[i]) - 1.0) < 1e-3) {
                cl.data()[i] = 0.0;
            }
        }
        check("clip", [&] { return sum(square(clip(cl, -1.0, 1.0))); }, {&cl});

        Tensor sm = random_tensor({3, 5}, rng);
        Tensor smw = random_tensor({3, 5}, rng);
        check("softmax", [&] { return sum(mul(softmax(sm), smw)); },
              {&sm});
        check("log_softmax", [&] { return sum(mul(log_softmax(sm), smw)); },
              {&sm});
        check("log_sum_exp", [&] { return sum(log_sum_exp(sm)); }, {&sm});
        check("sum_last", [&] { return sum(square(sum_last(sm))); }, {&sm});
        check("mean", [&] { return mean(square(sm)); }, {&sm});
        check("norm_l1", [&] { return norm_l1(r); }, {&r});
        check("norm_l2", [&] { return norm_l2(e); }, {&e});

        // max_last away from ties
        Tensor mx({2, 3}, {0.1, 0.9, 0.3, 1.2, -0.5, 0.4});
        check("max_last", [&] { return sum(max_last(mx)); }, {&mx});

        Tensor c1 = random_tensor({3, 2}, rng);
        Tensor c2 = random_tensor({3, 4}, rng);
        check("concat_last",
              [&] { return sum(square(concat_last(c1, c2))); }, {&c1, &c2});
        check("slice_last",
              [&] { return sum(square(slice_last(c2, 1, 2))); }, {&c2});

        Tensor s1 = random_tensor({4}, rng);
        Tensor s2 = random_tensor({4}, rng);
        check("stack_last",
              [&] { return sum(square(stack_last({s1, s2}))); }, {&s1, &s2});
        check("reshape",
              [&] { return sum(square(reshape(c2, {4, 3}))); }, {&c2});
    }

    // sign and clip plateaus propagate zero gradient
    Tensor s = random_tensor({5}, rng);
    {
        GradientTape tape;
        tape.watch(s);
        auto grads = tape.backward(sum(sign(s)));
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK(grads.wrt(s).at(i) == 0.0);
        }
    }
    Tensor plateau = Tensor::row({-5.0, 5.0});
    {
        GradientTape tape;
        tape.watch(plateau);
        auto grads = tape.backward(sum(clip(plateau, -1.0, 1.0)));
        CHECK(grads.wrt(plateau).at(0) == 0.0);
        CHECK(grads.wrt(plateau).at(1) == 0.0);
    }
}

TEST_CASE("gaussian_log_density matches the closed form") {
    const Tensor x({1, 1}, {0.3});
    const Tensor mean({1, 1}, {0.3});
    const Tensor lv = Tensor::zeros({1, 1});
    CHECK(gaussian_log_density(x, mean, lv).at(0) ==
          doctest::Approx(-0.9189385332046727).epsilon(1e-12));

    const Tensor x2({1, 1}, {1.3});
    CHECK(gaussian_log_density(x2, mean, lv).at(0) ==
          doctest::Approx(-1.4189385332046727).epsilon(1e-12));

    RngStream rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<double> xv = rng.uniforms(3, -2.0, 2.0);
        const std::vector<double> mv = rng.uniforms(3, -2.0, 2.0);
        const std::vector<double> lvv = rng.uniforms(3, -1.0, 1.0);
        const Tensor got = gaussian_log_density(
            Tensor({1, 3}, std::vector<double>(xv)),
            Tensor({1, 3}, std::vector<double>(mv)),
            Tensor({1, 3}, std::vector<double>(lvv)));
        CHECK(std::abs(got.at(0) -
                       testutil::gaussian_logpdf_direct(xv, mv, lvv)) < 1e-12);
    }
}

TEST_CASE("gaussian_log_density rejects non-finite log variance") {
    const Tensor x({1, 1}, {0.0});
    const Tensor bad({1, 1},
                     {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS((void)gaussian_log_density(x, x, bad), NumericError);
}

TEST_CASE("gaussian_log_density gradient vs finite differences") {
    RngStream rng(7);
    Tensor x({2, 3}, rng.uniforms(6, -2.0, 2.0));
    Tensor mean({2, 3}, rng.uniforms(6, -2.0, 2.0));
    Tensor lv({2, 3}, rng.uniforms(6, -1.0, 1.0));
    const double err = testutil::gradcheck(
        [&] { return sum(gaussian_log_density(x, mean, lv)); },
        {&x, &mean, &lv});
    CHECK(err < 1e-5);
}

TEST_CASE("reparameterize: pathwise derivative and variance floor") {
    // dz/dmean = identity
    Tensor mean({1, 4}, {0.1, -0.2, 0.3, 0.0});
    Tensor lv = Tensor::zeros({1, 4});
    {
        GradientTape tape;
        tape.watch(mean);
        RngStream rng(9);
        Tensor z = reparameterize(mean, lv, rng);
        auto grads = tape.backward(sum(z));
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(grads.wrt(mean).at(i) == 1.0);
        }
    }
    // variance floor: as log_var -> -inf-ish, z -> mean
    Tensor tiny = Tensor::full({1, 4}, -2000.0);
    RngStream rng(10);
    Tensor z = reparameterize(mean, tiny, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(z.at(i) - mean.at(i)) < 1e-3);  // sd floor is 1e-4
    }
    // Monte Carlo: sample mean within 3 standard errors
    RngStream mc(11);
    const std::size_t n = 100000;
    Tensor mu = Tensor::full({n, 1}, 0.7);
    Tensor lv2 = Tensor::zeros({n, 1});
    Tensor draws = reparameterize(mu, lv2, mc);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += draws.at(i);
    const double se = 1.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(acc / n - 0.7) < 3.0 * se);
}

TEST_CASE("reparameterize draws gradient-free noise") {
    Tensor mean = Tensor::zeros({1, 3});
    Tensor lv = Tensor::zeros({1, 3});
    GradientTape tape;
    tape.watch(mean);
    tape.watch(lv);
    RngStream rng(12);
    Tensor z = reparameterize(mean, lv, rng);
    auto grads = tape.backward(sum(square(z)));
    // d/dlv of (exp(lv/2) eps)^2 = eps^2 exp(lv) -> nonzero almost surely
    bool lv_nonzero = false;
    for (std::size_t i = 0; i < 3; ++i) {
        if (grads.wrt(lv).at(i) != 0.0) lv_nonzero = true;
    }
    CHECK(lv_nonzero);
}
