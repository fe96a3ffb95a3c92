#include <doctest.h>

#include <cmath>

#include "deepbayes/attacks.hpp"
#include "deepbayes/bnn.hpp"
#include "deepbayes/errors.hpp"
#include "deepbayes/two_rings.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace deepbayes;

namespace {

void check_ball_box(const Tensor& crafted, const Tensor& clean, double eps,
                    const AttackConfig& cfg) {
    for (std::size_t i = 0; i < crafted.size(); ++i) {
        CHECK(std::abs(crafted.at(i) - clean.at(i)) <= eps + 1e-9);
        if (cfg.use_box) {
            CHECK(crafted.at(i) >= cfg.box_lo);
            CHECK(crafted.at(i) <= cfg.box_hi);
        }
    }
}

// Two-blob dataset inside the unit square; well-separated, trivially
// learnable, and box-compatible.
Dataset unit_square_rings(std::size_t n_per_class, RngStream& rng) {
    TwoRingsSpec spec;
    spec.center0 = {0.5, 0.5};
    spec.center1 = {0.5, 0.5};
    spec.radius0 = 0.15;
    spec.radius1 = 0.32;
    spec.noise_std = 0.015;
    return sample_two_rings(spec, n_per_class, rng);
}

MlpClassifier trained_unit_mlp(const Dataset& data, RngStream& rng) {
    MlpClassifierConfig c;
    c.input_dim = 2;
    c.class_count = 2;
    c.hidden = {16};
    c.dropout_rate = 0.0;
    MlpClassifier model(c, rng);
    TrainConfig tc;
    tc.epochs = 150;
    tc.batch_size = 64;
    tc.learning_rate = 1e-2;
    RngStream train_rng = rng.child(1);
    train_mlp(model, data, tc, train_rng);
    return model;
}

}  // namespace

TEST_CASE("fgsm: zero budget is the identity") {
    TwoRingsSpec spec;
    TwoRingsClassifier model(spec);
    RngStream data_rng(1);
    const Dataset data = sample_two_rings(spec, 10, data_rng);
    AttackConfig cfg;
    cfg.kind = "fgsm";
    cfg.epsilon = 0.0;
    cfg.use_box = false;
    RngStream rng(2);
    const Tensor crafted = fgsm(model, data.inputs, data.labels, cfg, rng);
    for (std::size_t i = 0; i < crafted.size(); ++i) {
        CHECK(crafted.at(i) == data.inputs.at(i));
    }
}

TEST_CASE("fgsm clips at the box edge") {
    // Linear net: logits = [x0, -x0]; true label 1 makes d loss/d x0 > 0.
    MlpClassifierConfig c;
    c.input_dim = 2;
    c.class_count = 2;
    c.hidden = {};
    RngStream rng(3);
    MlpClassifier model(c, rng);
    auto params = model.parameters();
    *params[0].second = Tensor({2, 2}, {1.0, -1.0, 0.0, 0.0});
    *params[1].second = Tensor::zeros({2});

    const Tensor x({1, 2}, {0.95, 0.5});
    AttackConfig cfg;
    cfg.kind = "fgsm";
    cfg.epsilon = 0.1;
    RngStream arng(4);
    const Tensor crafted = fgsm(model, x, {1}, cfg, arng);
    CHECK(crafted.at(0, 0) == 1.0);  // 0.95 + 0.1 clipped to the box
    CHECK(crafted.at(0, 1) == 0.5);  // zero gradient coordinate unchanged
}

TEST_CASE("fgsm moves uphill on the analytic two-rings loss") {
    TwoRingsSpec spec;
    TwoRingsClassifier model(spec);
    RngStream data_rng(5);
    const Dataset data = sample_two_rings(spec, 50, data_rng);
    AttackConfig cfg;
    cfg.kind = "fgsm";
    cfg.epsilon = 0.02;
    cfg.use_box = false;
    RngStream rng(6);
    const Tensor crafted = fgsm(model, data.inputs, data.labels, cfg, rng);
    const Tensor y = one_hot(data.labels, 2);
    RngStream r1(0), r2(0);
    const double before =
        attack_loss(model, data.inputs, y, 1, r1).item();
    const double after = attack_loss(model, crafted, y, 1, r2).item();
    CHECK(after >= before);
}

TEST_CASE("pgd respects the ball, the box and zero budget") {
    RngStream data_rng(7);
    const Dataset data = unit_square_rings(40, data_rng);
    RngStream init_rng(8);
    MlpClassifier model = trained_unit_mlp(data, init_rng);

    AttackConfig cfg;
    cfg.kind = "pgd";
    cfg.epsilon = 0.3;
    cfg.step_size = 0.05;
    cfg.iterations = 20;
    RngStream rng(9);
    const Tensor crafted = pgd(model, data.inputs, data.labels, cfg, rng);
    check_ball_box(crafted, data.inputs, cfg.epsilon, cfg);

    cfg.epsilon = 0.0;
    RngStream rng2(10);
    const Tensor same = pgd(model, data.inputs, data.labels, cfg, rng2);
    for (std::size_t i = 0; i < same.size(); ++i) {
        CHECK(same.at(i) == data.inputs.at(i));
    }
}

TEST_CASE("pgd beats fgsm on a trained net at eps = 0.3") {
    RngStream data_rng(11);
    const Dataset data = unit_square_rings(100, data_rng);
    RngStream init_rng(12);
    MlpClassifier model = trained_unit_mlp(data, init_rng);

    AttackConfig cfg;
    cfg.epsilon = 0.3;
    cfg.step_size = 0.02;
    cfg.iterations = 40;
    RngStream r1(13), r2(14), p1(15), p2(16);
    const Tensor x_f = fgsm(model, data.inputs, data.labels, cfg, r1);
    const Tensor x_p = pgd(model, data.inputs, data.labels, cfg, r2);
    const auto pred_f = predict(model, x_f, 1, p1).labels;
    const auto pred_p = predict(model, x_p, 1, p2).labels;
    std::size_t succ_f = 0, succ_p = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        succ_f += pred_f[i] != data.labels[i];
        succ_p += pred_p[i] != data.labels[i];
    }
    CHECK(succ_p >= succ_f);
}

TEST_CASE("mim with zero decay reduces to iterated sign steps") {
    RngStream data_rng(17);
    const Dataset data = unit_square_rings(30, data_rng);
    RngStream init_rng(18);
    MlpClassifier model = trained_unit_mlp(data, init_rng);

    AttackConfig cfg;
    cfg.epsilon = 0.2;
    cfg.step_size = 0.02;
    cfg.iterations = 10;
    cfg.momentum_decay = 0.0;
    cfg.random_start = false;
    RngStream r1(19), r2(19);
    const Tensor via_mim = mim(model, data.inputs, data.labels, cfg, r1);
    const Tensor via_pgd = pgd(model, data.inputs, data.labels, cfg, r2);
    for (std::size_t i = 0; i < via_mim.size(); ++i) {
        CHECK(via_mim.at(i) == via_pgd.at(i));
    }
    check_ball_box(via_mim, data.inputs, cfg.epsilon, cfg);
}

TEST_CASE("cw degenerate c = 0 returns the clean input") {
    RngStream data_rng(20);
    const Dataset data = unit_square_rings(10, data_rng);
    RngStream init_rng(21);
    MlpClassifier model = trained_unit_mlp(data, init_rng);
    // The degenerate case is meaningful only on inputs the model already
    // classifies correctly; attack that subset.
    RngStream check_rng(50);
    const auto clean_pred = predict(model, data.inputs, 1, check_rng).labels;
    std::vector<double> rows;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (clean_pred[i] != data.labels[i]) continue;
        rows.push_back(data.inputs.at(i, 0));
        rows.push_back(data.inputs.at(i, 1));
        labels.push_back(data.labels[i]);
    }
    REQUIRE(labels.size() >= 10);
    const Tensor inputs({labels.size(), 2}, std::move(rows));

    AttackConfig cfg;
    cfg.kind = "cw";
    cfg.cw_c = 0.0;
    cfg.cw_iterations = 50;
    RngStream rng(22);
    const CwResult res = cw_l2(model, inputs, labels, cfg, rng);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CHECK_FALSE(res.success[i]);
        CHECK(res.distortion[i] == 0.0);
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        CHECK(res.crafted.at(i) == inputs.at(i));
    }
}

TEST_CASE("cw stays inside the box by construction") {
    RngStream data_rng(23);
    const Dataset data = unit_square_rings(10, data_rng);
    RngStream init_rng(24);
    MlpClassifier model = trained_unit_mlp(data, init_rng);
    AttackConfig cfg;
    cfg.kind = "cw";
    cfg.cw_c = 5.0;
    cfg.cw_iterations = 100;
    cfg.cw_learning_rate = 0.05;
    RngStream rng(25);
    const CwResult res = cw_l2(model, data.inputs, data.labels, cfg, rng);
    for (std::size_t i = 0; i < res.crafted.size(); ++i) {
        CHECK(res.crafted.at(i) >= 0.0);
        CHECK(res.crafted.at(i) <= 1.0);
    }
}

TEST_CASE("cw finds the minimal-distortion boundary crossing") {
    // Linear boundary x0 = x1; analytic distance |x0-x1|/sqrt(2).
    MlpClassifierConfig c;
    c.input_dim = 2;
    c.class_count = 2;
    c.hidden = {};
    RngStream rng(26);
    MlpClassifier model(c, rng);
    auto params = model.parameters();
    *params[0].second = Tensor({2, 2}, {1.0, 0.0, -1.0, 0.0});
    *params[1].second = Tensor::zeros({2});

    const Tensor x({1, 2}, {0.7, 0.3});  // label 0, margin 0.4
    AttackConfig cfg;
    cfg.kind = "cw";
    cfg.cw_c = 100.0;
    cfg.cw_learning_rate = 0.005;
    cfg.cw_iterations = 1000;
    RngStream arng(27);
    const CwResult res = cw_l2(model, x, {0}, cfg, arng);
    REQUIRE(res.success[0]);
    const double analytic = 0.4 / std::sqrt(2.0);
    CHECK(res.distortion[0] <= analytic * 1.05);
    CHECK(res.distortion[0] >= analytic * 0.95);
}

TEST_CASE("spsa estimator: constant loss, then a fixed 10-D quadratic") {
    RngStream rng(28);
    const std::vector<double> x0 = rng.uniforms(10, -1.0, 1.0);
    const auto constant = [](const std::vector<double>&) { return 3.5; };
    const std::vector<double> zero =
        spsa_gradient_estimate(constant, x0, 0.01, 200, rng);
    for (double g : zero) CHECK(g == 0.0);

    // f(x) = 0.5 x^T A x + b^T x with A = diag(1..10), b_i = i/10
    const auto quad = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double a = static_cast<double>(i + 1);
            acc += 0.5 * a * v[i] * v[i] +
                   (static_cast<double>(i) / 10.0) * v[i];
        }
        return acc;
    };
    std::vector<double> truth(10);
    for (std::size_t i = 0; i < 10; ++i) {
        truth[i] = static_cast<double>(i + 1) * x0[i] +
                   static_cast<double>(i) / 10.0;
    }
    const std::vector<double> est =
        spsa_gradient_estimate(quad, x0, 0.01, 2000, rng);
    double dot = 0.0, ne = 0.0, nt = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        dot += est[i] * truth[i];
        ne += est[i] * est[i];
        nt += truth[i] * truth[i];
    }
    CHECK(dot / std::sqrt(ne * nt) >= 0.99);
}

TEST_CASE("spsa attack keeps the ball invariant and can leave x unchanged") {
    // Constant-logit model: margin is flat, estimate is zero, x fixed.
    MlpClassifierConfig c;
    c.input_dim = 2;
    c.class_count = 2;
    c.hidden = {};
    RngStream rng(29);
    MlpClassifier model(c, rng);
    auto params = model.parameters();
    *params[0].second = Tensor::zeros({2, 2});
    *params[1].second = Tensor({2}, {0.3, -0.2});

    const Tensor x({2, 2}, {0.4, 0.6, 0.2, 0.8});
    AttackConfig cfg;
    cfg.kind = "spsa";
    cfg.epsilon = 0.1;
    cfg.spsa_samples = 32;
    cfg.spsa_iterations = 5;
    cfg.spsa_stop_threshold = -1e9;
    RngStream arng(30);
    const Tensor crafted = spsa(model, x, {0, 0}, cfg, arng);
    for (std::size_t i = 0; i < crafted.size(); ++i) {
        CHECK(crafted.at(i) == x.at(i));
    }

    // A real model: invariants hold.
    RngStream data_rng(31);
    const Dataset data = unit_square_rings(6, data_rng);
    RngStream init_rng(32);
    MlpClassifier trained = trained_unit_mlp(data, init_rng);
    cfg.spsa_samples = 64;
    cfg.spsa_iterations = 10;
    RngStream arng2(33);
    const Tensor crafted2 =
        spsa(trained, data.inputs, data.labels, cfg, arng2);
    check_ball_box(crafted2, data.inputs, cfg.epsilon, cfg);
}

namespace {

// A trained GBZ two-rings model plus its calibration, shared by the WB+S
// cases below.
struct WbsFixture {
    Dataset data;
    std::shared_ptr<DeepBayesModel> model;
    DetectorCalibration calib;
};

WbsFixture make_wbs_fixture() {
    WbsFixture fx;
    TwoRingsSpec spec;
    RngStream data_rng(34);
    fx.data = sample_two_rings(spec, 150, data_rng);
    ModelConfig c;
    c.factorization = Factorization::GBZ;
    c.input_dim = 2;
    c.latent_dim = 2;
    c.hidden = {16};
    c.k_samples = 5;
    RngStream init(35);
    fx.model = std::make_shared<DeepBayesModel>(c, init);
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 75;
    tc.learning_rate = 3e-3;
    RngStream train_rng(36);
    train(*fx.model, fx.data, tc, train_rng);
    RngStream calib_rng(37);
    fx.calib = calibrate(*fx.model, fx.data, CalibrationMode::TargetFpr,
                         0.05, 5, calib_rng);
    return fx;
}

}  // namespace

TEST_CASE("wbs objective gradient matches finite differences") {
    WbsFixture fx = make_wbs_fixture();
    Tensor x({2, 2}, {0.9, 0.3, -1.6, 0.8});
    const Tensor y = one_hot({0, 1}, 2);
    RngStream frng(38);
    const auto frozen = fx.model->freeze_samples(x, 3, frng);
    for (DetectorKind stat :
         {DetectorKind::Marginal, DetectorKind::Logit, DetectorKind::KL}) {
        const double err = testutil::gradcheck(
            [&] {
                return wbs_objective(*fx.model, fx.calib, frozen, x, y, 0.5,
                                     stat);
            },
            {&x});
        INFO("statistic " << to_string(stat) << " err " << err);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("wbs with lambda = 0 matches an inactive-hinge run exactly") {
    WbsFixture fx = make_wbs_fixture();
    const std::size_t n = 20;
    Tensor x({n, 2});
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x.data()[2 * i] = fx.data.inputs.at(i, 0);
        x.data()[2 * i + 1] = fx.data.inputs.at(i, 1);
        y[i] = fx.data.labels[i];
    }
    AttackConfig cfg;
    cfg.kind = "wbs";
    cfg.epsilon = 0.3;
    cfg.step_size = 0.03;
    cfg.iterations = 12;
    cfg.k_samples = 4;
    cfg.use_box = false;
    cfg.wbs_statistic = DetectorKind::Logit;

    // Thresholds at +inf keep the hinge inactive for any lambda, so the
    // lambda = 0 reduction must reproduce the trajectory bit for bit.
    DetectorCalibration inert = fx.calib;
    for (auto& s : inert.logit) {
        s.threshold = std::numeric_limits<double>::infinity();
    }
    cfg.lambda_detect = 0.0;
    RngStream r1(39);
    const Tensor a = wbs_detection_aware(*fx.model, inert, x, y, cfg, r1);
    cfg.lambda_detect = 10.0;
    RngStream r2(39);
    const Tensor b = wbs_detection_aware(*fx.model, inert, x, y, cfg, r2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.at(i) == b.at(i));
    }
    check_ball_box(a, x, cfg.epsilon, cfg);
}

TEST_CASE("wbs statistic availability is validated") {
    WbsFixture fx = make_wbs_fixture();
    AttackConfig cfg;
    cfg.kind = "wbs";
    cfg.wbs_statistic = DetectorKind::TV;
    RngStream rng(40);
    const Tensor x({1, 2}, {1.0, 0.0});
    CHECK_THROWS_AS(
        (void)wbs_detection_aware(*fx.model, fx.calib, x, {0}, cfg, rng),
        ConfigError);
}

TEST_CASE("attack determinism: same seed, bit-identical batches") {
    WbsFixture fx = make_wbs_fixture();
    AttackConfig cfg;
    cfg.epsilon = 0.4;
    cfg.step_size = 0.05;
    cfg.iterations = 8;
    cfg.k_samples = 3;
    cfg.use_box = false;
    const Tensor x = fx.data.inputs;
    RngStream r1(41), r2(41);
    const Tensor a = pgd(*fx.model, x, fx.data.labels, cfg, r1);
    const Tensor b = pgd(*fx.model, x, fx.data.labels, cfg, r2);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("fgsm loss is nondecreasing in the budget on interior inputs") {
    TwoRingsSpec spec;
    TwoRingsClassifier model(spec);
    RngStream data_rng(42);
    const Dataset data = sample_two_rings(spec, 40, data_rng);
    AttackConfig cfg;
    cfg.kind = "fgsm";
    cfg.use_box = false;
    const Tensor y = one_hot(data.labels, 2);
    double prev = -std::numeric_limits<double>::infinity();
    for (double eps : {0.0, 0.05, 0.1, 0.15, 0.2}) {
        cfg.epsilon = eps;
        RngStream rng(43);
        const Tensor crafted =
            fgsm(model, data.inputs, data.labels, cfg, rng);
        RngStream eval(0);
        const double loss = attack_loss(model, crafted, y, 1, eval).item();
        CHECK(loss >= prev - 1e-12);
        prev = loss;
    }
}

TEST_CASE("adversarial batch serialization round trip") {
    RngStream data_rng(44);
    const Dataset data = unit_square_rings(8, data_rng);
    AdversarialBatch batch;
    batch.source_model_id = "m1";
    batch.attack_kind = "pgd";
    batch.config.kind = "pgd";
    batch.seed = 77;
    batch.clean_inputs = data.inputs;
    batch.true_labels = data.labels;
    AttackSettingResult s;
    s.setting = 0.3;
    s.crafted = data.inputs.clone();
    s.crafted.data()[0] += 0.25;
    s.predicted.assign(data.size(), 1);
    s.success.assign(data.size(), true);
    s.success[2] = false;
    s.stat_marginal.assign(data.size(), 1.5);
    s.stat_logit.assign(data.size(), 2.5);
    s.stat_kl.assign(data.size(), 0.1);
    s.stat_tv.assign(data.size(), 0.2);
    s.evaluated = true;
    batch.settings.push_back(s);

    const std::string base =
        (std::filesystem::temp_directory_path() / "deepbayes_batch_rt")
            .string();
    save_batch(batch, base);
    const AdversarialBatch back = load_batch(base);
    CHECK(back.source_model_id == "m1");
    CHECK(back.attack_kind == "pgd");
    CHECK(back.seed == 77);
    CHECK(back.true_labels == batch.true_labels);
    REQUIRE(back.settings.size() == 1);
    CHECK(back.settings[0].setting == 0.3);
    CHECK(back.settings[0].evaluated);
    CHECK(back.settings[0].success == s.success);
    for (std::size_t i = 0; i < s.crafted.size(); ++i) {
        CHECK(back.settings[0].crafted.at(i) == s.crafted.at(i));
    }
    CHECK(back.settings[0].stat_logit[3] == 2.5);
}
