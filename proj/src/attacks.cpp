#include "deepbayes/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepbayes/adam.hpp"
#include "deepbayes/errors.hpp"
#include "deepbayes/ops.hpp"
#include "deepbayes/tape.hpp"
#include "io_util.hpp"

namespace deepbayes {

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw ConfigError("attack: epsilon must be >= 0");
    if (step_size <= 0.0) throw ConfigError("attack: step size must be > 0");
    if (k_samples < 1) throw ConfigError("attack: k_samples must be >= 1");
    if (use_box && box_lo >= box_hi) {
        throw ConfigError("attack: box_lo must be below box_hi");
    }
    if (cw_c < 0.0) throw ConfigError("attack: cw_c must be >= 0");
    if (momentum_decay < 0.0) {
        throw ConfigError("attack: momentum decay must be >= 0");
    }
}

namespace {

// Coordinatewise projection onto the eps-ball around `clean` intersected
// with the input box.
Tensor project(const Tensor& candidate, const Tensor& clean, double eps,
               const AttackConfig& cfg) {
    Tensor out = candidate.clone();
    double* p = out.data();
    const double* c = clean.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = std::min(std::max(p[i], c[i] - eps), c[i] + eps);
        if (cfg.use_box) v = std::min(std::max(v, cfg.box_lo), cfg.box_hi);
        p[i] = v;
    }
    return out;
}

Tensor grad_wrt_input(const Classifier& model, const Tensor& x,
                      const Tensor& y_onehot, std::size_t k, RngStream& rng) {
    GradientTape tape;
    tape.watch(x);
    const Tensor loss = attack_loss(model, x, y_onehot, k, rng);
    return tape.backward(loss).wrt(x);
}

Tensor uniform_ball_start(const Tensor& x, double eps, const AttackConfig& cfg,
                          RngStream& rng) {
    Tensor out = x.clone();
    double* p = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        p[i] += rng.uniform(-eps, eps);
    }
    return project(out, x, eps, cfg);
}

void check_attack_inputs(const Classifier& model, const Tensor& x,
                         const std::vector<std::size_t>& y) {
    if (x.rank() != 2 || x.dim(1) != model.input_dim()) {
        throw ShapeError("attack: inputs " + x.shape_str() +
                         " do not match model input dim " +
                         std::to_string(model.input_dim()));
    }
    if (y.size() != x.dim(0)) {
        throw ShapeError("attack: label count does not match batch");
    }
}

}  // namespace

Tensor attack_loss(const Classifier& model, const Tensor& x,
                   const Tensor& y_onehot, std::size_t k, RngStream& rng) {
    const Tensor logits = model.class_logits(x, k, rng);
    return -mean(sum_last(mul(log_softmax(logits), y_onehot)));
}

Tensor margin_loss_rows(const Tensor& logits, const Tensor& y_onehot) {
    const Tensor z_true = sum_last(mul(logits, y_onehot));
    // Mask the true class far down so max_last picks the runner-up.
    const Tensor masked =
        sub(logits, mul(y_onehot, Tensor::scalar(1e9)));
    return sub(z_true, max_last(masked));
}

Tensor fgsm(const Classifier& model, const Tensor& x,
            const std::vector<std::size_t>& y, const AttackConfig& config,
            RngStream& rng) {
    config.validate();
    check_attack_inputs(model, x, y);
    const Tensor y_onehot = one_hot(y, model.class_count());
    const Tensor g =
        grad_wrt_input(model, x, y_onehot, config.k_samples, rng);
    Tensor crafted = x.clone();
    double* p = crafted.data();
    const double* pg = g.data();
    for (std::size_t i = 0; i < crafted.size(); ++i) {
        const double s = pg[i] > 0.0 ? 1.0 : (pg[i] < 0.0 ? -1.0 : 0.0);
        p[i] += config.epsilon * s;
    }
    return project(crafted, x, config.epsilon, config);
}

Tensor pgd(const Classifier& model, const Tensor& x,
           const std::vector<std::size_t>& y, const AttackConfig& config,
           RngStream& rng) {
    config.validate();
    check_attack_inputs(model, x, y);
    const Tensor y_onehot = one_hot(y, model.class_count());
    Tensor cur = config.random_start
                     ? uniform_ball_start(x, config.epsilon, config, rng)
                     : x.clone();
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const Tensor g =
            grad_wrt_input(model, cur, y_onehot, config.k_samples, rng);
        Tensor next = cur.clone();
        double* p = next.data();
        const double* pg = g.data();
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double s = pg[i] > 0.0 ? 1.0 : (pg[i] < 0.0 ? -1.0 : 0.0);
            p[i] += config.step_size * s;
        }
        cur = project(next, x, config.epsilon, config);
    }
    return cur;
}

Tensor mim(const Classifier& model, const Tensor& x,
           const std::vector<std::size_t>& y, const AttackConfig& config,
           RngStream& rng) {
    config.validate();
    check_attack_inputs(model, x, y);
    const Tensor y_onehot = one_hot(y, model.class_count());
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    Tensor cur = x.clone();
    Tensor momentum = Tensor::zeros(x.shape());
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const Tensor g =
            grad_wrt_input(model, cur, y_onehot, config.k_samples, rng);
        double* pm = momentum.data();
        const double* pg = g.data();
        for (std::size_t r = 0; r < n; ++r) {
            double l1 = 0.0;
            for (std::size_t j = 0; j < d; ++j) l1 += std::abs(pg[r * d + j]);
            const double scale = l1 < 1e-12 ? 1.0 : 1.0 / l1;
            for (std::size_t j = 0; j < d; ++j) {
                pm[r * d + j] = config.momentum_decay * pm[r * d + j] +
                                scale * pg[r * d + j];
            }
        }
        Tensor next = cur.clone();
        double* p = next.data();
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double s = pm[i] > 0.0 ? 1.0 : (pm[i] < 0.0 ? -1.0 : 0.0);
            p[i] += config.step_size * s;
        }
        cur = project(next, x, config.epsilon, config);
    }
    return cur;
}

CwResult cw_l2(const Classifier& model, const Tensor& x,
               const std::vector<std::size_t>& y, const AttackConfig& config,
               RngStream& rng) {
    config.validate();
    check_attack_inputs(model, x, y);
    if (!config.use_box) {
        throw ConfigError("cw_l2: the tanh parameterization needs an input box");
    }
    const double lo = config.box_lo, hi = config.box_hi;
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    const Tensor y_onehot = one_hot(y, model.class_count());

    // w = atanh(2 (x-lo)/(hi-lo) - 1), nudged off the open-interval edges.
    Tensor w(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double t = 2.0 * (x.at(i) - lo) / (hi - lo) - 1.0;
        t = std::min(std::max(t, -1.0 + 1e-6), 1.0 - 1e-6);
        w.data()[i] = std::atanh(t);
    }

    std::vector<Tensor> params = {w};
    AdamState adam(params,
                   AdamConfig{config.cw_learning_rate, 0.9, 0.999, 1e-8});
    std::vector<bool> success(n, false);
    std::vector<double> best_dist(n, std::numeric_limits<double>::infinity());
    // Rows with no successful iterate keep the clean input (zero
    // distortion, attack counted as failed), the convention of the attack
    // library this follows.
    Tensor best = x.clone();

    for (std::size_t it = 0; it < config.cw_iterations; ++it) {
        GradientTape tape;
        tape.watch(params[0]);
        const Tensor xh =
            add(mul(add(tanh(params[0]), Tensor::scalar(1.0)),
                    Tensor::scalar(0.5 * (hi - lo))),
                Tensor::scalar(lo));
        const Tensor dist2 = sum_last(square(sub(xh, x)));
        const Tensor logits =
            model.class_logits(xh, config.k_samples, rng);
        const Tensor margin = margin_loss_rows(logits, y_onehot);
        // max(margin, -kappa) = relu(margin + kappa) - kappa
        const Tensor hinge =
            sub(relu(add(margin, Tensor::scalar(config.cw_confidence))),
                Tensor::scalar(config.cw_confidence));
        const Tensor objective =
            sum(add(dist2, mul(Tensor::scalar(config.cw_c), hinge)));
        Gradients grads = tape.backward(objective);
        const std::vector<std::size_t> pred = argmax_last(logits);
        for (std::size_t r = 0; r < n; ++r) {
            if (pred[r] == y[r]) continue;
            const double dist = std::sqrt(dist2.at(r));
            if (dist < best_dist[r]) {
                best_dist[r] = dist;
                success[r] = true;
                std::copy(xh.data() + r * d, xh.data() + (r + 1) * d,
                          best.data() + r * d);
            }
        }
        std::vector<Tensor> g = {grads.wrt(params[0])};
        adam.step(params, g);
    }

    CwResult result;
    result.crafted = best;
    result.success = success;
    result.distortion.assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = result.crafted.at(r, j) - x.at(r, j);
            acc += diff * diff;
        }
        result.distortion[r] = std::sqrt(acc);
    }
    return result;
}

std::vector<double> spsa_gradient_estimate(
    const std::function<double(const std::vector<double>&)>& loss,
    const std::vector<double>& x, double delta, std::size_t samples,
    RngStream& rng) {
    if (delta <= 0.0) throw ConfigError("spsa: delta must be > 0");
    if (samples < 1) throw ConfigError("spsa: needs at least one sample");
    const std::size_t d = x.size();
    std::vector<double> estimate(d, 0.0);
    std::vector<double> plus(d), minus(d), v(d);
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t j = 0; j < d; ++j) {
            v[j] = rng.rademacher();
            plus[j] = x[j] + delta * v[j];
            minus[j] = x[j] - delta * v[j];
        }
        const double diff = (loss(plus) - loss(minus)) / (2.0 * delta);
        for (std::size_t j = 0; j < d; ++j) estimate[j] += diff * v[j];
    }
    for (double& g : estimate) g /= static_cast<double>(samples);
    return estimate;
}

Tensor spsa(const Classifier& model, const Tensor& x,
            const std::vector<std::size_t>& y, const AttackConfig& config,
            RngStream& rng) {
    config.validate();
    check_attack_inputs(model, x, y);
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    Tensor crafted = x.clone();
    for (std::size_t r = 0; r < n; ++r) {
        const Tensor clean_row =
            reshape(take_row(x, r), {std::size_t{1}, d});
        const Tensor y_row = one_hot({y[r]}, model.class_count());
        // Margin loss from logits only; no tape is involved.
        auto loss = [&](const std::vector<double>& vals) {
            const Tensor xi(std::vector<std::size_t>{1, d},
                            std::vector<double>(vals));
            const Tensor logits =
                model.class_logits(xi, config.k_samples, rng);
            return margin_loss_rows(logits, y_row).at(0);
        };
        std::vector<double> cur(x.data() + r * d, x.data() + (r + 1) * d);
        std::vector<Tensor> params = {
            Tensor(std::vector<std::size_t>{d}, cur)};
        AdamState adam(params,
                       AdamConfig{config.spsa_learning_rate, 0.9, 0.999, 1e-8});
        for (std::size_t it = 0; it < config.spsa_iterations; ++it) {
            if (loss(std::vector<double>(params[0].data(),
                                         params[0].data() + d)) <
                config.spsa_stop_threshold) {
                break;
            }
            const std::vector<double> estimate = spsa_gradient_estimate(
                loss,
                std::vector<double>(params[0].data(), params[0].data() + d),
                config.spsa_delta, config.spsa_samples, rng);
            std::vector<Tensor> g = {
                Tensor(std::vector<std::size_t>{d}, estimate)};
            adam.step(params, g);
            const Tensor projected =
                project(reshape(params[0], {std::size_t{1}, d}), clean_row,
                        config.epsilon, config);
            params[0] = reshape(projected, {d});
        }
        std::copy(params[0].data(), params[0].data() + d,
                  crafted.data() + r * d);
    }
    return crafted;
}

Tensor wbs_objective(const DeepBayesModel& model,
                     const DetectorCalibration& calib,
                     const std::vector<std::vector<Tensor>>& frozen,
                     const Tensor& x, const Tensor& y_onehot, double lambda,
                     DetectorKind statistic) {
    const std::size_t n = x.dim(0);
    const std::size_t c = model.class_count();
    const std::size_t k = frozen.empty() ? 0 : frozen.front().size();
    if (frozen.size() != c || k == 0) {
        throw ShapeError("wbs_objective: frozen samples do not match classes");
    }
    std::vector<Tensor> per_k;
    per_k.reserve(k);
    Tensor true_class_term;  // sum_k log p_k(y | x)
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<Tensor> z_per_class(c);
        for (std::size_t cls = 0; cls < c; ++cls) {
            z_per_class[cls] = frozen[cls][i];
        }
        const Tensor lk = model.sample_logits(x, z_per_class);
        per_k.push_back(lk);
        const Tensor term = sum_last(mul(log_softmax(lk), y_onehot));
        true_class_term = i == 0 ? term : add(true_class_term, term);
    }
    Tensor loss_rows = true_class_term;
    if (lambda != 0.0) {
        // Eq.-2 logits over the frozen samples.
        const Tensor eq2 =
            sub(log_sum_exp(stack_last(per_k)),
                Tensor::scalar(std::log(static_cast<double>(k))));
        const std::vector<std::size_t> pred = argmax_last(eq2);
        Tensor phi;
        Tensor delta({n});
        if (statistic == DetectorKind::Marginal) {
            phi = -log_sum_exp(eq2);
            for (std::size_t r = 0; r < n; ++r) {
                delta.data()[r] = calib.marginal.threshold;
            }
        } else if (statistic == DetectorKind::Logit) {
            phi = -sum_last(mul(eq2, one_hot(pred, c)));
            for (std::size_t r = 0; r < n; ++r) {
                delta.data()[r] = calib.logit[pred[r]].threshold;
            }
        } else {  // KL
            Tensor pc({n, c});
            Tensor self({n});
            for (std::size_t r = 0; r < n; ++r) {
                const auto& mp = calib.mean_prob[pred[r]];
                std::copy(mp.begin(), mp.end(), pc.data() + r * c);
                double s = 0.0;
                for (double p : mp) {
                    if (p > 0.0) s += p * std::log(p);
                }
                self.data()[r] = s;
                delta.data()[r] = calib.kl[pred[r]].threshold;
            }
            phi = sub(self, sum_last(mul(pc, log_softmax(eq2))));
        }
        loss_rows =
            add(loss_rows, mul(Tensor::scalar(lambda), relu(sub(phi, delta))));
    }
    return mean(loss_rows);
}

Tensor wbs_detection_aware(const DeepBayesModel& model,
                           const DetectorCalibration& calib, const Tensor& x,
                           const std::vector<std::size_t>& y,
                           const AttackConfig& config, RngStream& rng) {
    config.validate();
    check_attack_inputs(model, x, y);
    const DetectorKind stat = config.wbs_statistic;
    if (stat == DetectorKind::TV) {
        throw ConfigError("wbs: statistic must be marginal, logit or kl");
    }
    if ((stat == DetectorKind::Marginal || stat == DetectorKind::Logit) &&
        !(calib.density_available && model.has_density())) {
        throw DensityUnavailable(
            "wbs: marginal/logit statistic unavailable for this model");
    }
    const Tensor y_onehot = one_hot(y, model.class_count());
    const double lambda = config.lambda_detect;

    // Frozen sample paths, drawn once at the clean input and reused in
    // every iteration ("white-box + sampling").
    const std::vector<std::vector<Tensor>> frozen =
        model.freeze_samples(x, config.k_samples, rng);

    Tensor cur = config.random_start
                     ? uniform_ball_start(x, config.epsilon, config, rng)
                     : x.clone();
    for (std::size_t it = 0; it < config.iterations; ++it) {
        GradientTape tape;
        tape.watch(cur);
        const Tensor loss =
            wbs_objective(model, calib, frozen, cur, y_onehot, lambda, stat);
        const Tensor g = tape.backward(loss).wrt(cur);
        Tensor next = cur.clone();
        double* p = next.data();
        const double* pg = g.data();
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double s = pg[i] > 0.0 ? 1.0 : (pg[i] < 0.0 ? -1.0 : 0.0);
            p[i] -= config.step_size * s;  // minimize
        }
        cur = project(next, x, config.epsilon, config);
    }
    return cur;
}

// ------------------------------------------------------- serialization

nlohmann::json attack_config_to_json(const AttackConfig& c) {
    nlohmann::json j;
    j["kind"] = c.kind;
    j["epsilon"] = c.epsilon;
    j["step_size"] = c.step_size;
    j["iterations"] = c.iterations;
    j["momentum_decay"] = c.momentum_decay;
    j["random_start"] = c.random_start;
    j["k_samples"] = c.k_samples;
    j["cw_c"] = c.cw_c;
    j["cw_learning_rate"] = c.cw_learning_rate;
    j["cw_confidence"] = c.cw_confidence;
    j["cw_iterations"] = c.cw_iterations;
    j["spsa_samples"] = c.spsa_samples;
    j["spsa_delta"] = c.spsa_delta;
    j["spsa_learning_rate"] = c.spsa_learning_rate;
    j["spsa_stop_threshold"] = c.spsa_stop_threshold;
    j["spsa_iterations"] = c.spsa_iterations;
    j["lambda_detect"] = c.lambda_detect;
    j["wbs_statistic"] = to_string(c.wbs_statistic);
    j["use_box"] = c.use_box;
    j["box_lo"] = c.box_lo;
    j["box_hi"] = c.box_hi;
    return j;
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
    AttackConfig c;
    c.kind = j.value("kind", c.kind);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.step_size = j.value("step_size", c.step_size);
    c.iterations = j.value("iterations", c.iterations);
    c.momentum_decay = j.value("momentum_decay", c.momentum_decay);
    c.random_start = j.value("random_start", c.random_start);
    c.k_samples = j.value("k_samples", c.k_samples);
    c.cw_c = j.value("cw_c", c.cw_c);
    c.cw_learning_rate = j.value("cw_learning_rate", c.cw_learning_rate);
    c.cw_confidence = j.value("cw_confidence", c.cw_confidence);
    c.cw_iterations = j.value("cw_iterations", c.cw_iterations);
    c.spsa_samples = j.value("spsa_samples", c.spsa_samples);
    c.spsa_delta = j.value("spsa_delta", c.spsa_delta);
    c.spsa_learning_rate =
        j.value("spsa_learning_rate", c.spsa_learning_rate);
    c.spsa_stop_threshold =
        j.value("spsa_stop_threshold", c.spsa_stop_threshold);
    c.spsa_iterations = j.value("spsa_iterations", c.spsa_iterations);
    c.lambda_detect = j.value("lambda_detect", c.lambda_detect);
    const std::string stat = j.value("wbs_statistic", std::string("logit"));
    c.wbs_statistic = stat == "marginal" ? DetectorKind::Marginal
                      : stat == "kl"     ? DetectorKind::KL
                      : stat == "tv"     ? DetectorKind::TV
                                         : DetectorKind::Logit;
    c.use_box = j.value("use_box", c.use_box);
    c.box_lo = j.value("box_lo", c.box_lo);
    c.box_hi = j.value("box_hi", c.box_hi);
    return c;
}

void save_batch(const AdversarialBatch& batch, const std::string& path_base) {
    const std::size_t n = batch.true_labels.size();
    const std::size_t d = batch.clean_inputs.dim(1);
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "adversarial_batch";
    j["source_model_id"] = batch.source_model_id;
    j["attack_kind"] = batch.attack_kind;
    j["config"] = attack_config_to_json(batch.config);
    j["seed"] = batch.seed;
    j["n"] = n;
    j["dim"] = d;
    j["true_labels"] = batch.true_labels;
    nlohmann::json settings = nlohmann::json::array();
    std::vector<double> blob(batch.clean_inputs.values());
    for (const AttackSettingResult& s : batch.settings) {
        nlohmann::json js;
        js["setting"] = s.setting;
        js["evaluated"] = s.evaluated;
        js["predicted"] = s.predicted;
        std::vector<int> flags(s.success.begin(), s.success.end());
        js["success"] = flags;
        settings.push_back(js);
        blob.insert(blob.end(), s.crafted.values().begin(),
                    s.crafted.values().end());
        for (const std::vector<double>* stats :
             {&s.stat_marginal, &s.stat_logit, &s.stat_kl, &s.stat_tv}) {
            if (stats->size() != n) {
                blob.insert(blob.end(), n,
                            std::numeric_limits<double>::quiet_NaN());
            } else {
                blob.insert(blob.end(), stats->begin(), stats->end());
            }
        }
    }
    j["settings"] = settings;
    io::save_json(j, path_base + ".json");
    io::write_f64_blob(path_base + ".bin", blob);
}

AdversarialBatch load_batch(const std::string& path_base) {
    const nlohmann::json j = io::load_json(path_base + ".json");
    if (j.value("kind", std::string()) != "adversarial_batch") {
        throw ArtifactError("not an adversarial batch: " + path_base);
    }
    AdversarialBatch batch;
    batch.source_model_id = j.at("source_model_id").get<std::string>();
    batch.attack_kind = j.at("attack_kind").get<std::string>();
    batch.config = attack_config_from_json(j.at("config"));
    batch.seed = j.at("seed").get<std::uint64_t>();
    const std::size_t n = j.at("n").get<std::size_t>();
    const std::size_t d = j.at("dim").get<std::size_t>();
    batch.true_labels = j.at("true_labels").get<std::vector<std::size_t>>();
    const auto& settings = j.at("settings");
    const std::size_t per_setting = n * d + 4 * n;
    const std::vector<double> blob = io::read_f64_blob(
        path_base + ".bin", n * d + settings.size() * per_setting);
    batch.clean_inputs =
        Tensor({n, d}, std::vector<double>(blob.begin(), blob.begin() + n * d));
    std::size_t off = n * d;
    for (const auto& js : settings) {
        AttackSettingResult s;
        s.setting = js.at("setting").get<double>();
        s.evaluated = js.at("evaluated").get<bool>();
        s.predicted = js.at("predicted").get<std::vector<std::size_t>>();
        const std::vector<int> flags = js.at("success").get<std::vector<int>>();
        s.success.assign(flags.begin(), flags.end());
        s.crafted = Tensor({n, d}, std::vector<double>(blob.begin() + off,
                                                       blob.begin() + off +
                                                           n * d));
        off += n * d;
        for (std::vector<double>* stats :
             {&s.stat_marginal, &s.stat_logit, &s.stat_kl, &s.stat_tv}) {
            stats->assign(blob.begin() + off, blob.begin() + off + n);
            off += n;
        }
        batch.settings.push_back(std::move(s));
    }
    return batch;
}

}  // namespace deepbayes
