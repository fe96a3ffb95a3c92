#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deepbayes/data.hpp"
#include "deepbayes/mlp.hpp"
#include "deepbayes/ops.hpp"
#include "deepbayes/rng.hpp"
#include "deepbayes/tensor.hpp"

namespace deepbayes {

// The seven factorizations of p(x,z,y). First letter: Generative (models
// p(x|.)) or Discriminative (p_D(x) cancels in the posterior); second:
// Fully-connected or Bottleneck; last: first node in topological order.
enum class Factorization { GFZ, GFY, GBZ, GBY, DFX, DFZ, DBX };

std::string to_string(Factorization f);
Factorization factorization_from_string(const std::string& s);
bool is_generative(Factorization f);
bool is_bottleneck(Factorization f);
// True when the model defines a density over x (generative models and
// DFZ); DFX/DBX have none.
bool has_marginal_density(Factorization f);

struct ModelConfig {
    Factorization factorization = Factorization::GFZ;
    std::size_t input_dim = 2;
    std::size_t class_count = 2;
    std::size_t latent_dim = 2;
    std::vector<std::size_t> hidden = {128, 128};
    double observation_variance = 1.0;  // sigma_x^2 for Gaussian p(x|.)
    std::size_t k_samples = 10;         // importance samples K

    void validate() const;
};

// Minimal classifier surface shared by deep Bayes models, the analytic
// two-rings model, the BNN baseline and distilled substitutes. class_logits
// is differentiable w.r.t. x under an active tape; for generative models the
// entries estimate log p(x, y_c), for discriminative ones they are
// unnormalized scores.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual std::size_t input_dim() const = 0;
    virtual std::size_t class_count() const = 0;
    virtual bool has_density() const = 0;
    virtual std::string kind() const = 0;
    // x: [N,D] -> [N,C].
    virtual Tensor class_logits(const Tensor& x, std::size_t k,
                                RngStream& rng) const = 0;
};

struct Prediction {
    std::vector<std::size_t> labels;  // argmax, lowest index on ties
    Tensor posterior;                 // [N,C]
    Tensor logits;                    // [N,C]
};

Prediction predict(const Classifier& model, const Tensor& x, std::size_t k,
                   RngStream& rng);

// log p(x) = lse_c of the class logits; throws DensityUnavailable for
// models without a density over x.
Tensor marginal_log_density(const Classifier& model, const Tensor& x,
                            std::size_t k, RngStream& rng);
Tensor marginal_from_logits(const Classifier& model, const Tensor& logits);

// Deep latent-variable classifier: the factorization's conditionals as
// MLPs, an amortized encoder q(z|x,y), and empirical class log-priors.
class DeepBayesModel : public Classifier {
public:
    DeepBayesModel(ModelConfig config, RngStream& rng);

    std::size_t input_dim() const override { return config_.input_dim; }
    std::size_t class_count() const override { return config_.class_count; }
    bool has_density() const override {
        return has_marginal_density(config_.factorization);
    }
    std::string kind() const override { return "deep_bayes"; }
    const ModelConfig& config() const { return config_; }

    // q(z|x,y) Gaussian natural parameters: ([N,dz] mean, [N,dz] log var).
    std::pair<Tensor, Tensor> encode(const Tensor& x,
                                     const Tensor& y_onehot) const;

    // Row-wise log p(x,z,y); the p_D(x) factor of DFX/DBX is omitted
    // (constant in both parameters and class).
    Tensor log_joint(const Tensor& x, const Tensor& z,
                     const Tensor& y_onehot) const;

    // Single-sample ELBO estimate E_q[log p(x,z,y) - log q(z|x,y)],
    // averaged over the batch.
    Tensor elbo(const Tensor& x, const Tensor& y_onehot, RngStream& rng) const;

    // Importance-sampled class scores: per class c, z_c^k ~ q(z|x,y_c) and
    // logit_c = lse_k[log p(x,z_c^k,y_c) - log q(z_c^k|x,y_c)] - log K.
    Tensor class_logits(const Tensor& x, std::size_t k,
                        RngStream& rng) const override;

    // Frozen sample paths for sampling-aware attacks: z[c][k] is [N,dz],
    // drawn once from q(z|x,y_c) at the given x.
    std::vector<std::vector<Tensor>> freeze_samples(const Tensor& x,
                                                    std::size_t k,
                                                    RngStream& rng) const;
    // Single-sample-set scores L_k[n,c] = log p(x,z_c,y_c) - log q(z_c|x,y_c)
    // for one frozen draw per class (z_per_class[c] is [N,dz]).
    Tensor sample_logits(const Tensor& x,
                         const std::vector<Tensor>& z_per_class) const;

    std::vector<std::pair<std::string, Tensor*>> parameters();
    std::vector<std::pair<std::string, const Tensor*>> parameters() const;

    const Tensor& class_log_prior() const { return class_log_prior_; }
    void set_class_prior_from_counts(const std::vector<std::size_t>& counts);
    void set_class_log_prior(Tensor log_prior);

    // Structural introspection (the bottleneck/discriminative wiring tests
    // key off these).
    bool owns_p_x() const { return p_x_zy_.has_value() || p_x_z_.has_value(); }
    const std::optional<ConditionalNet>& net_p_z_y() const { return p_z_y_; }
    const std::optional<ConditionalNet>& net_p_y_z() const { return p_y_z_; }
    const std::optional<ConditionalNet>& net_p_x_zy() const { return p_x_zy_; }
    const std::optional<ConditionalNet>& net_p_x_z() const { return p_x_z_; }
    const std::optional<ConditionalNet>& net_p_z_x() const { return p_z_x_; }
    const std::optional<ConditionalNet>& net_p_y_zx() const { return p_y_zx_; }

private:
    ModelConfig config_;
    ConditionalNet encoder_;                // q(z|x,y): main x, aux y
    std::optional<ConditionalNet> p_z_y_;   // main y -> 2 dz
    std::optional<ConditionalNet> p_y_z_;   // main z -> C
    std::optional<ConditionalNet> p_x_zy_;  // main z, aux y -> D
    std::optional<ConditionalNet> p_x_z_;   // main z -> D
    std::optional<ConditionalNet> p_z_x_;   // main x -> 2 dz
    std::optional<ConditionalNet> p_y_zx_;  // main x, aux z -> C
    Tensor class_log_prior_;                // [C], log-sum-exps to 0
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 0;  // 0 = full batch
    double learning_rate = 1e-3;
};

struct TrainResult {
    std::vector<double> loss_trace;  // mean ELBO per epoch
};

// Adam ascent on the ELBO; records one mean-ELBO entry per epoch and sets
// the empirical class prior from label frequencies.
TrainResult train(DeepBayesModel& model, const Dataset& data,
                  const TrainConfig& config, RngStream& rng);

}  // namespace deepbayes
