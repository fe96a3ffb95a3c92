#pragma once

#include <string>
#include <vector>

#include "deepbayes/data.hpp"
#include "deepbayes/mlp.hpp"
#include "deepbayes/model.hpp"

namespace deepbayes {

struct MlpClassifierConfig {
    std::size_t input_dim = 2;
    std::size_t class_count = 2;
    std::vector<std::size_t> hidden = {256, 256};  // BNN default: 2x widths
    double dropout_rate = 0.0;                     // 0.3 for the BNN baseline
    std::size_t k_samples = 10;

    void validate() const;
};

// Plain MLP classifier, optionally Bayesian via Bernoulli dropout kept
// active at prediction time. With dropout the class scores are
// log((1/K) sum_k softmax(f_k(x))), so softmax of the scores is the
// dropout-averaged posterior; without dropout they are the raw network
// outputs. Serves as the BNN baseline and as the substitute architecture.
class MlpClassifier : public Classifier {
public:
    MlpClassifier(MlpClassifierConfig config, RngStream& rng);

    std::size_t input_dim() const override { return config_.input_dim; }
    std::size_t class_count() const override { return config_.class_count; }
    bool has_density() const override { return false; }
    std::string kind() const override {
        return config_.dropout_rate > 0.0 ? "bnn" : "mlp";
    }
    const MlpClassifierConfig& config() const { return config_; }

    // One forward pass; draws a dropout mask from rng when training or
    // sampling (rate > 0), deterministic otherwise.
    Tensor raw_scores(const Tensor& x, RngStream* dropout_rng) const;

    Tensor class_logits(const Tensor& x, std::size_t k,
                        RngStream& rng) const override;

    std::vector<std::pair<std::string, Tensor*>> parameters();

private:
    MlpClassifierConfig config_;
    std::vector<DenseLayer> layers_;
};

// Cross-entropy training with Adam; dropout (if configured) is active with
// one fresh mask per step.
TrainResult train_mlp(MlpClassifier& model, const Dataset& data,
                      const TrainConfig& config, RngStream& rng);

// Soft-target cross-entropy against given probability rows [N,C]
// (grey-box distillation).
TrainResult train_mlp_soft(MlpClassifier& model, const Tensor& inputs,
                           const Tensor& target_probs,
                           const TrainConfig& config, RngStream& rng);

}  // namespace deepbayes
