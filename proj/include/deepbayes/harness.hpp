#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepbayes/attacks.hpp"
#include "deepbayes/checkpoint.hpp"
#include "deepbayes/detect.hpp"
#include "deepbayes/substitute.hpp"

namespace deepbayes {

struct ModelEntry {
    std::string id;
    std::string type = "deep_bayes";  // deep_bayes | bnn | mlp | two_rings
    ModelConfig model;                // deep_bayes
    MlpClassifierConfig mlp;          // bnn / mlp
    TwoRingsSpec rings;               // two_rings
};

struct AttackGrid {
    AttackConfig base;
    std::vector<double> settings;       // epsilon grid, c grid, or lambda grid
    std::vector<std::string> model_ids; // empty = every model
};

struct TransferSpec {
    std::string source;
    std::string target;
    std::string attack;
};

// One JSON config drives every pipeline stage. Seeds are explicit; every
// cell derives its own substream from (seed, stage, cell id), so serial
// and parallel schedules produce identical artifacts.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::size_t k_samples = 10;

    std::string dataset_kind = "two_rings";  // two_rings | idx | features
    TwoRingsSpec rings;
    std::size_t n_per_class = 1000;
    std::size_t test_n_per_class = 100;
    std::string idx_images, idx_labels;
    std::string idx_test_images, idx_test_labels;
    std::string feature_path;
    std::optional<std::pair<std::size_t, std::size_t>> binary_subset;

    std::vector<ModelEntry> models;
    TrainConfig train;
    CalibrationMode calib_mode = CalibrationMode::TargetFpr;
    double calib_parameter = 0.05;
    std::vector<AttackGrid> attacks;
    std::size_t attack_count = 0;  // 0 = all test points
    std::vector<TransferSpec> transfers;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;
};

// Per-(model, attack, setting) metric cell; nullopt renders as N/A.
struct MetricCell {
    std::string model_id;
    std::string attack;
    double setting = 0.0;
    double victim_accuracy = 0.0;
    double success_rate = 0.0;
    std::optional<double> tp_marginal, tp_logit, tp_kl, tp_tv;
};

struct TransferCell {
    std::string source_id;
    std::string target_id;
    std::string attack;
    double setting = 0.0;
    std::size_t transferred = 0;  // source-successful examples
    std::optional<double> victim_accuracy;  // on the transferred subset
    std::optional<double> tp_marginal, tp_logit, tp_kl, tp_tv;
};

struct MetricsReport {
    std::vector<std::pair<std::string, double>> clean_accuracy;  // per model
    std::vector<MetricCell> cells;
    // mean minimum perturbation per (model, l_inf attack)
    struct MinPert {
        std::string model_id;
        std::string attack;
        double mean = 0.0;
    };
    std::vector<MinPert> min_perturbations;
    std::vector<TransferCell> transfers;

    void write_csv(const std::string& path) const;
    void write_transfer_csv(const std::string& path) const;
};

// Per-input minimum perturbation over an increasing epsilon grid: the
// smallest successful epsilon, or eps_max + 0.1 when no attack succeeded.
struct MinPerturbationResult {
    std::vector<double> per_input;
    double mean = 0.0;
};
MinPerturbationResult min_perturbation(
    const std::vector<std::vector<bool>>& success_per_setting,
    const std::vector<double>& grid);

// Victim accuracy and per-detector TP rates for one evaluated batch
// setting. TP rates are computed on successful attacks only and are
// nullopt when there are none (or the detector is unavailable).
MetricCell evaluate_setting(const std::string& model_id,
                            const std::string& attack,
                            const AttackSettingResult& setting,
                            const std::vector<std::size_t>& true_labels,
                            const DetectorCalibration& calib);

// Re-evaluate a crafted batch against another model ("transfer successful
// attacks"): metrics restricted to the source-successful subset.
std::vector<TransferCell> transfer_eval(const AdversarialBatch& batch,
                                        const std::string& target_id,
                                        const Classifier& target,
                                        const DetectorCalibration& calib,
                                        std::size_t k, RngStream rng);

// Pipeline stages; each reads/writes versioned artifacts under out_dir.
Dataset load_train_dataset(const ExperimentConfig& config);
Dataset load_attack_dataset(const ExperimentConfig& config);

void run_train(const ExperimentConfig& config, const std::string& out_dir);
void run_calibrate(const ExperimentConfig& config, const std::string& out_dir);
void run_attack(const ExperimentConfig& config, const std::string& out_dir,
                std::size_t jobs = 1);
void run_detect(const ExperimentConfig& config, const std::string& out_dir);
MetricsReport run_evaluate(const ExperimentConfig& config,
                           const std::string& out_dir);
void run_transfer(const ExperimentConfig& config, const std::string& out_dir);
void run_report(const ExperimentConfig& config, const std::string& out_dir);
void run_full_pipeline(const ExperimentConfig& config,
                       const std::string& out_dir, std::size_t jobs = 1);

// Fig.-2-style decision/rejection grid for the analytic two-rings model,
// thresholds at 10% training FPR.
void run_two_rings_demo(const TwoRingsSpec& spec, std::uint64_t seed,
                        const std::string& out_dir);

std::string model_path(const std::string& out_dir, const std::string& id);
std::string batch_path(const std::string& out_dir, const std::string& model_id,
                       const std::string& attack);

}  // namespace deepbayes
