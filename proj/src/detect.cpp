#include "deepbayes/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepbayes/errors.hpp"
#include "deepbayes/ops.hpp"

namespace deepbayes {

std::string to_string(DetectorKind k) {
    switch (k) {
        case DetectorKind::Marginal: return "marginal";
        case DetectorKind::Logit: return "logit";
        case DetectorKind::KL: return "kl";
        case DetectorKind::TV: return "tv";
    }
    return "?";
}

std::string to_string(DivergenceKind k) {
    return k == DivergenceKind::KL ? "kl" : "tv";
}

std::string to_string(CalibrationMode m) {
    return m == CalibrationMode::Alpha ? "alpha" : "target_fpr";
}

double kl_divergence(const std::vector<double>& p,
                     const std::vector<double>& q) {
    if (p.size() != q.size()) {
        throw ShapeError("kl_divergence: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;  // 0 log 0 = 0
        acc += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-12)));
    }
    // The q floor can leak tiny negative values; KL is nonnegative.
    return std::max(acc, 0.0);
}

double tv_distance(const std::vector<double>& p,
                   const std::vector<double>& q) {
    if (p.size() != q.size()) {
        throw ShapeError("tv_distance: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

std::vector<InputEvaluation> evaluate_batch(const Classifier& model,
                                            const Tensor& x, std::size_t k,
                                            RngStream& rng) {
    const Tensor logits = model.class_logits(x, k, rng);
    const Tensor post = softmax(logits);
    const std::vector<std::size_t> labels = argmax_last(logits);
    const bool density = model.has_density();
    const std::size_t n = x.dim(0);
    const std::size_t c = model.class_count();
    std::vector<InputEvaluation> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        InputEvaluation& e = out[i];
        e.logits.assign(logits.data() + i * c, logits.data() + (i + 1) * c);
        e.posterior.assign(post.data() + i * c, post.data() + (i + 1) * c);
        e.predicted = labels[i];
        e.density_available = density;
        if (density) {
            // lse over the row
            double mx = e.logits[0];
            for (double v : e.logits) mx = std::max(mx, v);
            double acc = 0.0;
            for (double v : e.logits) acc += std::exp(v - mx);
            e.marginal_log_density = mx + std::log(acc);
        } else {
            e.marginal_log_density = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

namespace {

double population_std(const std::vector<double>& xs, double mean) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double v : xs) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

// Threshold so that exactly ceil(rate*n) calibration statistics exceed it
// (quantile definition; boundary-inclusive acceptance).
double target_fpr_threshold(std::vector<double> stats, double rate) {
    const std::size_t n = stats.size();
    if (n == 0) return std::numeric_limits<double>::infinity();
    std::size_t rejects = static_cast<std::size_t>(
        std::ceil(rate * static_cast<double>(n) - 1e-12));
    if (rejects > n) rejects = n;
    if (rejects == n) return -std::numeric_limits<double>::infinity();
    std::sort(stats.begin(), stats.end());
    return stats[n - rejects - 1];
}

DetectorStats make_stats(const std::vector<double>& xs, CalibrationMode mode,
                         double parameter) {
    DetectorStats s;
    if (xs.empty()) {
        s.threshold = std::numeric_limits<double>::infinity();
        return s;
    }
    double acc = 0.0;
    for (double v : xs) acc += v;
    s.mean = acc / static_cast<double>(xs.size());
    s.stddev = population_std(xs, s.mean);
    s.threshold = mode == CalibrationMode::Alpha
                      ? s.mean + parameter * s.stddev
                      : target_fpr_threshold(xs, parameter);
    return s;
}

std::size_t count_rejects(const std::vector<double>& xs, double threshold) {
    std::size_t n = 0;
    for (double v : xs) {
        if (v > threshold) ++n;
    }
    return n;
}

DetectionDecision decide(DetectorKind kind, double statistic,
                         double threshold) {
    return DetectionDecision{kind, statistic, threshold,
                             statistic <= threshold};
}

}  // namespace

DetectorCalibration calibrate(const Classifier& model, const Dataset& train,
                              CalibrationMode mode, double parameter,
                              std::size_t k, RngStream& rng) {
    train.validate();
    if (mode == CalibrationMode::TargetFpr &&
        (parameter < 0.0 || parameter > 1.0)) {
        throw ConfigError("calibrate: target FPR must lie in [0,1]");
    }
    const std::size_t n = train.size();
    const std::size_t c = model.class_count();
    if (train.class_count != c) {
        throw ShapeError("calibrate: dataset classes do not match model");
    }
    const std::vector<InputEvaluation> evals =
        evaluate_batch(model, train.inputs, k, rng);

    DetectorCalibration calib;
    calib.mode = mode;
    calib.parameter = parameter;
    calib.k_samples = k;
    calib.density_available = model.has_density();
    calib.training_size = n;
    calib.class_sizes.assign(c, 0);
    for (std::size_t y : train.labels) ++calib.class_sizes[y];

    // Marginal detector over the whole training set.
    if (calib.density_available) {
        std::vector<double> phi(n);
        for (std::size_t i = 0; i < n; ++i) {
            phi[i] = -evals[i].marginal_log_density;
        }
        calib.marginal = make_stats(phi, mode, parameter);
        calib.marginal_rejects = count_rejects(phi, calib.marginal.threshold);
    }

    // Per-class populations, keyed by the true label.
    std::vector<std::vector<double>> logit_phi(c), kl_phi(c), tv_phi(c);
    calib.mean_prob.assign(c, std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = train.labels[i];
        for (std::size_t j = 0; j < c; ++j) {
            calib.mean_prob[y][j] += evals[i].posterior[j];
        }
    }
    for (std::size_t cls = 0; cls < c; ++cls) {
        if (calib.class_sizes[cls] == 0) continue;
        for (double& v : calib.mean_prob[cls]) {
            v /= static_cast<double>(calib.class_sizes[cls]);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = train.labels[i];
        if (calib.density_available) {
            logit_phi[y].push_back(-evals[i].logits[y]);
        }
        kl_phi[y].push_back(
            kl_divergence(calib.mean_prob[y], evals[i].posterior));
        tv_phi[y].push_back(
            tv_distance(calib.mean_prob[y], evals[i].posterior));
    }

    calib.logit.resize(c);
    calib.kl.resize(c);
    calib.tv.resize(c);
    calib.logit_rejects.assign(c, 0);
    calib.kl_rejects.assign(c, 0);
    calib.tv_rejects.assign(c, 0);
    for (std::size_t cls = 0; cls < c; ++cls) {
        if (calib.density_available) {
            calib.logit[cls] = make_stats(logit_phi[cls], mode, parameter);
            calib.logit_rejects[cls] =
                count_rejects(logit_phi[cls], calib.logit[cls].threshold);
        }
        calib.kl[cls] = make_stats(kl_phi[cls], mode, parameter);
        calib.kl_rejects[cls] =
            count_rejects(kl_phi[cls], calib.kl[cls].threshold);
        calib.tv[cls] = make_stats(tv_phi[cls], mode, parameter);
        calib.tv_rejects[cls] =
            count_rejects(tv_phi[cls], calib.tv[cls].threshold);
    }
    return calib;
}

DetectionDecision detect_marginal(const DetectorCalibration& calib,
                                  const InputEvaluation& eval) {
    if (!calib.density_available || !eval.density_available) {
        throw DensityUnavailable(
            "detect_marginal: density unavailable for this model");
    }
    return decide(DetectorKind::Marginal, -eval.marginal_log_density,
                  calib.marginal.threshold);
}

DetectionDecision detect_logit(const DetectorCalibration& calib,
                               const InputEvaluation& eval) {
    return detect_logit_at(calib, eval, eval.predicted);
}

DetectionDecision detect_logit_at(const DetectorCalibration& calib,
                                  const InputEvaluation& eval,
                                  std::size_t cls) {
    if (!calib.density_available || !eval.density_available) {
        throw DensityUnavailable(
            "detect_logit: density unavailable for this model");
    }
    if (cls >= calib.logit.size()) {
        throw ShapeError("detect_logit: class out of range");
    }
    return decide(DetectorKind::Logit, -eval.logits[cls],
                  calib.logit[cls].threshold);
}

DetectionDecision detect_divergence(const DetectorCalibration& calib,
                                    const InputEvaluation& eval,
                                    DivergenceKind kind) {
    const std::size_t cls = eval.predicted;
    if (cls >= calib.mean_prob.size()) {
        throw ShapeError("detect_divergence: class out of range");
    }
    if (kind == DivergenceKind::KL) {
        return decide(DetectorKind::KL,
                      kl_divergence(calib.mean_prob[cls], eval.posterior),
                      calib.kl[cls].threshold);
    }
    return decide(DetectorKind::TV,
                  tv_distance(calib.mean_prob[cls], eval.posterior),
                  calib.tv[cls].threshold);
}

namespace {
InputEvaluation eval_single(const Classifier& model, const Tensor& x,
                            std::size_t k, RngStream& rng) {
    Tensor xb = x;
    if (x.rank() == 1) xb = reshape(x, {1, x.dim(0)});
    return evaluate_batch(model, xb, k, rng).front();
}
}  // namespace

DetectionDecision detect_marginal(const DetectorCalibration& calib,
                                  const Classifier& model, const Tensor& x,
                                  std::size_t k, RngStream& rng) {
    return detect_marginal(calib, eval_single(model, x, k, rng));
}

DetectionDecision detect_logit(const DetectorCalibration& calib,
                               const Classifier& model, const Tensor& x,
                               std::size_t k, RngStream& rng) {
    return detect_logit(calib, eval_single(model, x, k, rng));
}

DetectionDecision detect_divergence(const DetectorCalibration& calib,
                                    const Classifier& model, const Tensor& x,
                                    std::size_t k, RngStream& rng,
                                    DivergenceKind kind) {
    return detect_divergence(calib, eval_single(model, x, k, rng), kind);
}

namespace {

// JSON has no +-inf literal; thresholds can be infinite (empty class
// population, reject-all quantile), so those become tagged strings.
nlohmann::json enc_double(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double dec_double(const nlohmann::json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    }
    return j.get<double>();
}

nlohmann::json stats_to_json(const DetectorStats& s) {
    return nlohmann::json{{"mean", enc_double(s.mean)},
                          {"std", enc_double(s.stddev)},
                          {"threshold", enc_double(s.threshold)}};
}

DetectorStats stats_from_json(const nlohmann::json& j) {
    DetectorStats s;
    s.mean = dec_double(j.at("mean"));
    s.stddev = dec_double(j.at("std"));
    s.threshold = dec_double(j.at("threshold"));
    return s;
}

nlohmann::json stats_list_to_json(const std::vector<DetectorStats>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : v) arr.push_back(stats_to_json(s));
    return arr;
}

std::vector<DetectorStats> stats_list_from_json(const nlohmann::json& arr) {
    std::vector<DetectorStats> out;
    for (const auto& j : arr) out.push_back(stats_from_json(j));
    return out;
}

}  // namespace

nlohmann::json calibration_to_json(const DetectorCalibration& calib) {
    nlohmann::json j;
    j["mode"] = to_string(calib.mode);
    j["parameter"] = calib.parameter;
    j["k_samples"] = calib.k_samples;
    j["density_available"] = calib.density_available;
    j["marginal"] = stats_to_json(calib.marginal);
    j["logit"] = stats_list_to_json(calib.logit);
    j["kl"] = stats_list_to_json(calib.kl);
    j["tv"] = stats_list_to_json(calib.tv);
    j["mean_prob"] = calib.mean_prob;
    j["training_size"] = calib.training_size;
    j["class_sizes"] = calib.class_sizes;
    j["marginal_rejects"] = calib.marginal_rejects;
    j["logit_rejects"] = calib.logit_rejects;
    j["kl_rejects"] = calib.kl_rejects;
    j["tv_rejects"] = calib.tv_rejects;
    return j;
}

DetectorCalibration calibration_from_json(const nlohmann::json& j) {
    DetectorCalibration calib;
    calib.mode = j.at("mode").get<std::string>() == "alpha"
                     ? CalibrationMode::Alpha
                     : CalibrationMode::TargetFpr;
    calib.parameter = j.at("parameter").get<double>();
    calib.k_samples = j.at("k_samples").get<std::size_t>();
    calib.density_available = j.at("density_available").get<bool>();
    calib.marginal = stats_from_json(j.at("marginal"));
    calib.logit = stats_list_from_json(j.at("logit"));
    calib.kl = stats_list_from_json(j.at("kl"));
    calib.tv = stats_list_from_json(j.at("tv"));
    calib.mean_prob =
        j.at("mean_prob").get<std::vector<std::vector<double>>>();
    calib.training_size = j.at("training_size").get<std::size_t>();
    calib.class_sizes = j.at("class_sizes").get<std::vector<std::size_t>>();
    calib.marginal_rejects = j.at("marginal_rejects").get<std::size_t>();
    calib.logit_rejects =
        j.at("logit_rejects").get<std::vector<std::size_t>>();
    calib.kl_rejects = j.at("kl_rejects").get<std::vector<std::size_t>>();
    calib.tv_rejects = j.at("tv_rejects").get<std::vector<std::size_t>>();
    return calib;
}

}  // namespace deepbayes
