#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepbayes/data.hpp"
#include "deepbayes/model.hpp"

namespace deepbayes {

enum class DivergenceKind { KL, TV };
enum class CalibrationMode { Alpha, TargetFpr };
enum class DetectorKind { Marginal, Logit, KL, TV };

std::string to_string(DetectorKind k);
std::string to_string(DivergenceKind k);
std::string to_string(CalibrationMode m);

// KL(p || q) with 0 log 0 = 0 and q floored at 1e-12 (the formula is
// undefined at exact zeros).
double kl_divergence(const std::vector<double>& p,
                     const std::vector<double>& q);
// Total variation (1/2) sum |p_i - q_i|.
double tv_distance(const std::vector<double>& p,
                   const std::vector<double>& q);

struct DetectorStats {
    double mean = 0.0;
    double stddev = 0.0;
    double threshold = 0.0;
};

// Threshold calibration for the marginal, logit and divergence detectors.
// Statistics are collected on training data with the classifier's own K;
// alpha mode sets threshold = mean + alpha * std, target-FPR mode sets it
// to the empirical (1 - rate) quantile so that exactly ceil(rate * n)
// calibration points are rejected.
struct DetectorCalibration {
    CalibrationMode mode = CalibrationMode::TargetFpr;
    double parameter = 0.05;  // alpha, or the target FPR
    std::size_t k_samples = 10;
    bool density_available = false;

    DetectorStats marginal;             // statistic: -log p(x)
    std::vector<DetectorStats> logit;   // per class, -log p(x, y_c)
    std::vector<std::vector<double>> mean_prob;  // p_c rows
    std::vector<DetectorStats> kl;      // per class, KL(p_c || p(x))
    std::vector<DetectorStats> tv;

    // Bookkeeping from calibration time.
    std::size_t training_size = 0;
    std::vector<std::size_t> class_sizes;
    std::size_t marginal_rejects = 0;
    std::vector<std::size_t> logit_rejects;
    std::vector<std::size_t> kl_rejects;
    std::vector<std::size_t> tv_rejects;
};

struct DetectionDecision {
    DetectorKind kind = DetectorKind::Marginal;
    double statistic = 0.0;
    double threshold = 0.0;
    bool accepted = true;  // accepted <=> statistic <= threshold
};

// Frozen per-input classifier outputs shared by every detector, so a
// single evaluation drives prediction and all detection decisions.
struct InputEvaluation {
    std::vector<double> logits;
    std::vector<double> posterior;
    std::size_t predicted = 0;
    double marginal_log_density = 0.0;  // meaningful iff density_available
    bool density_available = false;
};

std::vector<InputEvaluation> evaluate_batch(const Classifier& model,
                                            const Tensor& x, std::size_t k,
                                            RngStream& rng);

DetectorCalibration calibrate(const Classifier& model, const Dataset& train,
                              CalibrationMode mode, double parameter,
                              std::size_t k, RngStream& rng);

DetectionDecision detect_marginal(const DetectorCalibration& calib,
                                  const InputEvaluation& eval);
DetectionDecision detect_logit(const DetectorCalibration& calib,
                               const InputEvaluation& eval);
// Logit detection with a manually assigned label (the statistic is
// evaluated at `cls` instead of the predicted class).
DetectionDecision detect_logit_at(const DetectorCalibration& calib,
                                  const InputEvaluation& eval,
                                  std::size_t cls);
DetectionDecision detect_divergence(const DetectorCalibration& calib,
                                    const InputEvaluation& eval,
                                    DivergenceKind kind);

// Single-input conveniences matching the calibrate/detect operation
// signatures; they evaluate x (shape [1,D] or [N,D] row 0) and dispatch.
DetectionDecision detect_marginal(const DetectorCalibration& calib,
                                  const Classifier& model, const Tensor& x,
                                  std::size_t k, RngStream& rng);
DetectionDecision detect_logit(const DetectorCalibration& calib,
                               const Classifier& model, const Tensor& x,
                               std::size_t k, RngStream& rng);
DetectionDecision detect_divergence(const DetectorCalibration& calib,
                                    const Classifier& model, const Tensor& x,
                                    std::size_t k, RngStream& rng,
                                    DivergenceKind kind);

nlohmann::json calibration_to_json(const DetectorCalibration& calib);
DetectorCalibration calibration_from_json(const nlohmann::json& j);

}  // namespace deepbayes
