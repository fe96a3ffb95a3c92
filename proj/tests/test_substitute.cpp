#include <doctest.h>

#include "deepbayes/errors.hpp"
#include "deepbayes/substitute.hpp"
#include "deepbayes/two_rings.hpp"

using namespace deepbayes;

namespace {

Dataset seed_points(std::size_t n_per_class, std::uint64_t seed) {
    TwoRingsSpec spec;
    RngStream rng(seed);
    return sample_two_rings(spec, n_per_class, rng);
}

}  // namespace

TEST_CASE("black-box augmentation doubles the dataset every loop") {
    TwoRingsSpec spec;
    TwoRingsClassifier victim(spec);
    SubstituteConfig cfg;
    cfg.black_box = true;
    cfg.hidden = {4};
    cfg.epochs_per_loop = 1;  // the recurrence is structural
    cfg.victim_k = 1;

    const Dataset seeds = seed_points(1000, 1);  // |D_1| = 2000
    cfg.outer_loops = 6;
    RngStream rng(2);
    const SubstituteResult r6 = train_substitute(victim, cfg, seeds, rng);
    CHECK(r6.query_count == 64000);  // 2000 * 2^5

    cfg.outer_loops = 1;
    RngStream rng2(3);
    const SubstituteResult r1 = train_substitute(victim, cfg, seeds, rng2);
    CHECK(r1.query_count == 2000);

    cfg.outer_loops = 3;
    RngStream rng3(4);
    const SubstituteResult r3 = train_substitute(victim, cfg, seeds, rng3);
    CHECK(r3.query_count == 8000);  // 2000 * 2^2
}

TEST_CASE("grey-box mode queries only the seed set") {
    TwoRingsSpec spec;
    TwoRingsClassifier victim(spec);
    SubstituteConfig cfg;
    cfg.black_box = false;
    cfg.hidden = {8};
    cfg.outer_loops = 2;
    cfg.epochs_per_loop = 2;
    const Dataset seeds = seed_points(50, 5);
    RngStream rng(6);
    const SubstituteResult res = train_substitute(victim, cfg, seeds, rng);
    CHECK(res.query_count == 100);
    CHECK(res.substitute->class_count() == 2);
}

TEST_CASE("substitute config validation") {
    SubstituteConfig cfg;
    cfg.outer_loops = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.outer_loops = 1;
    cfg.lambda = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("black-box substitute agrees with the victim on held-out points") {
    TwoRingsSpec spec;
    TwoRingsClassifier victim(spec);
    SubstituteConfig cfg;
    cfg.black_box = true;
    cfg.hidden = {32, 32};
    cfg.outer_loops = 4;
    cfg.epochs_per_loop = 10;
    cfg.learning_rate = 5e-3;
    cfg.victim_k = 1;
    const Dataset seeds = seed_points(200, 7);
    RngStream rng(8);
    const SubstituteResult res = train_substitute(victim, cfg, seeds, rng);

    const Dataset held = seed_points(250, 9);
    RngStream v_rng(10), s_rng(11);
    const auto v_pred = predict(victim, held.inputs, 1, v_rng).labels;
    const auto s_pred =
        predict(*res.substitute, held.inputs, 1, s_rng).labels;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < held.size(); ++i) {
        agree += v_pred[i] == s_pred[i];
    }
    CHECK(static_cast<double>(agree) / static_cast<double>(held.size()) >=
          0.90);
}
