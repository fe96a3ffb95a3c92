#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deepbayes/detect.hpp"
#include "deepbayes/model.hpp"

namespace deepbayes {

struct AttackConfig {
    std::string kind = "pgd";  // fgsm | pgd | mim | cw | spsa | wbs
    double epsilon = 0.3;      // l_inf budget
    double step_size = 0.01;
    std::size_t iterations = 40;
    double momentum_decay = 1.0;  // MIM mu
    bool random_start = true;     // PGD/WBS uniform start in the eps-ball
    std::size_t k_samples = 10;

    // CW-l2
    double cw_c = 1.0;  // loss-balancing parameter
    double cw_learning_rate = 0.01;
    double cw_confidence = 0.0;  // kappa
    std::size_t cw_iterations = 1000;

    // SPSA
    std::size_t spsa_samples = 2000;
    double spsa_delta = 0.01;
    double spsa_learning_rate = 0.01;
    double spsa_stop_threshold = -5.0;
    std::size_t spsa_iterations = 100;

    // Detection-aware WB+S
    double lambda_detect = 0.0;
    DetectorKind wbs_statistic = DetectorKind::Logit;

    // Input box; disable for unconstrained domains like the two-rings plane.
    bool use_box = true;
    double box_lo = 0.0;
    double box_hi = 1.0;

    void validate() const;
};

// Untargeted cross-entropy at the true labels with fresh K-sample logits;
// the common loss of the l_inf attacks.
Tensor attack_loss(const Classifier& model, const Tensor& x,
                   const Tensor& y_onehot, std::size_t k, RngStream& rng);

// Margin loss rows Z_true - max_{j != true} Z_j (CW / SPSA objective).
Tensor margin_loss_rows(const Tensor& logits, const Tensor& y_onehot);

// x' = clip_box(x + eps * sign(grad x CE)).
Tensor fgsm(const Classifier& model, const Tensor& x,
            const std::vector<std::size_t>& y, const AttackConfig& config,
            RngStream& rng);

// Iterated sign ascent projected to the eps-ball and box; optional
// seeded uniform random start.
Tensor pgd(const Classifier& model, const Tensor& x,
           const std::vector<std::size_t>& y, const AttackConfig& config,
           RngStream& rng);

// Momentum iterative method: g <- mu g + grad/||grad||_1 per input (the
// normalization is skipped below 1e-12), then sign steps.
Tensor mim(const Classifier& model, const Tensor& x,
           const std::vector<std::size_t>& y, const AttackConfig& config,
           RngStream& rng);

struct CwResult {
    Tensor crafted;
    std::vector<bool> success;
    std::vector<double> distortion;  // l2 of the returned iterate
};

// Carlini-Wagner l2 in tanh space: minimize ||x'-x||_2^2 +
// c * max(margin, -kappa) with Adam; returns the lowest-distortion
// successful iterate per input, else the final iterate.
CwResult cw_l2(const Classifier& model, const Tensor& x,
               const std::vector<std::size_t>& y, const AttackConfig& config,
               RngStream& rng);

// SPSA gradient estimate: mean over Rademacher pairs of the symmetric
// difference quotient. Exposed for the estimator checks.
std::vector<double> spsa_gradient_estimate(
    const std::function<double(const std::vector<double>&)>& loss,
    const std::vector<double>& x, double delta, std::size_t samples,
    RngStream& rng);

// Gradient-free l_inf attack on the margin loss using SPSA estimates and
// Adam, projected to the eps-ball and box, with early stop below the
// configured threshold.
Tensor spsa(const Classifier& model, const Tensor& x,
            const std::vector<std::size_t>& y, const AttackConfig& config,
            RngStream& rng);

// Mean over the batch of the detection-aware sampling objective
//   sum_k log p_k(y|x) + lambda * max(0, Phi(x) - delta)
// evaluated at x with the given frozen sample paths; differentiable in x.
// Phi is the marginal/logit/KL statistic of the frozen-sample Eq.-2
// classifier with its calibrated threshold.
Tensor wbs_objective(const DeepBayesModel& model,
                     const DetectorCalibration& calib,
                     const std::vector<std::vector<Tensor>>& frozen,
                     const Tensor& x, const Tensor& y_onehot, double lambda,
                     DetectorKind statistic);

// Detection-aware sampling attack: freeze {z_c^k} once, then PGD-minimize
// the objective above within the eps-ball. lambda = 0 is the plain WB+S
// attack.
Tensor wbs_detection_aware(const DeepBayesModel& model,
                           const DetectorCalibration& calib, const Tensor& x,
                           const std::vector<std::size_t>& y,
                           const AttackConfig& config, RngStream& rng);

// One crafted grid entry: the batch attacked at a single setting value.
struct AttackSettingResult {
    double setting = 0.0;  // epsilon for l_inf kinds, c for CW
    Tensor crafted;
    std::vector<std::size_t> predicted;
    std::vector<bool> success;
    // Detection statistics on the crafted inputs (NaN when unavailable).
    std::vector<double> stat_marginal, stat_logit, stat_kl, stat_tv;
    bool evaluated = false;
};

// Crafted inputs for one (model, attack) cell across the setting grid,
// serializable so batches can be re-scored against other models.
struct AdversarialBatch {
    std::string source_model_id;
    std::string attack_kind;
    AttackConfig config;
    std::uint64_t seed = 0;
    Tensor clean_inputs;
    std::vector<std::size_t> true_labels;
    std::vector<AttackSettingResult> settings;
};

void save_batch(const AdversarialBatch& batch, const std::string& path_base);
AdversarialBatch load_batch(const std::string& path_base);

nlohmann::json attack_config_to_json(const AttackConfig& config);
AttackConfig attack_config_from_json(const nlohmann::json& j);

}  // namespace deepbayes
