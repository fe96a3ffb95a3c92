#include "deepbayes/substitute.hpp"

#include "deepbayes/errors.hpp"
#include "deepbayes/ops.hpp"
#include "deepbayes/tape.hpp"

namespace deepbayes {

void SubstituteConfig::validate() const {
    if (outer_loops < 1) {
        throw ConfigError("substitute: outer_loops must be >= 1");
    }
    if (lambda <= 0.0) throw ConfigError("substitute: lambda must be > 0");
    if (epochs_per_loop < 1) {
        throw ConfigError("substitute: epochs_per_loop must be >= 1");
    }
}

namespace {

std::vector<std::size_t> query_labels(const Classifier& victim,
                                      const Tensor& inputs, std::size_t k,
                                      RngStream& rng) {
    return predict(victim, inputs, k, rng).labels;
}

// x_hat = x + lambda * grad_x p(x)^T y for every row, with p the
// substitute's probability output and y the row's one-hot label.
Tensor jacobian_augment(const MlpClassifier& substitute, const Tensor& inputs,
                        const std::vector<std::size_t>& labels,
                        double lambda) {
    const Tensor y_onehot = one_hot(labels, substitute.class_count());
    GradientTape tape;
    tape.watch(inputs);
    const Tensor probs = softmax(substitute.raw_scores(inputs, nullptr));
    // Row sums are independent, so one scalar reduction gives every row's
    // gradient at once.
    const Tensor target = sum(mul(probs, y_onehot));
    const Tensor g = tape.backward(target).wrt(inputs);
    Tensor out = inputs.clone();
    double* p = out.data();
    const double* pg = g.data();
    for (std::size_t i = 0; i < out.size(); ++i) p[i] += lambda * pg[i];
    return out;
}

}  // namespace

SubstituteResult train_substitute(const Classifier& victim,
                                  const SubstituteConfig& config,
                                  const Dataset& seed_data, RngStream& rng) {
    config.validate();
    seed_data.validate();
    if (seed_data.input_dim() != victim.input_dim()) {
        throw ShapeError("train_substitute: seed data does not match victim");
    }

    MlpClassifierConfig sub_config;
    sub_config.input_dim = victim.input_dim();
    sub_config.class_count = victim.class_count();
    sub_config.hidden = config.hidden;
    sub_config.dropout_rate = 0.0;
    sub_config.k_samples = 1;
    RngStream init_rng = rng.child(hash64("substitute-init"));
    auto substitute = std::make_shared<MlpClassifier>(sub_config, init_rng);

    RngStream victim_rng = rng.child(hash64("victim-queries"));
    RngStream train_rng = rng.child(hash64("substitute-train"));

    TrainConfig tc;
    tc.epochs = config.epochs_per_loop;
    tc.batch_size = config.batch_size;
    tc.learning_rate = config.learning_rate;

    SubstituteResult result;
    if (!config.black_box) {
        // Grey box: soft probability targets on the seed set.
        const Tensor targets =
            softmax(victim.class_logits(seed_data.inputs, config.victim_k,
                                        victim_rng));
        tc.epochs = config.epochs_per_loop * config.outer_loops;
        train_mlp_soft(*substitute, seed_data.inputs, targets, tc, train_rng);
        result.substitute = substitute;
        result.query_count = seed_data.size();
        return result;
    }

    // Black box with Jacobian-based dataset augmentation.
    Dataset current;
    current.inputs = seed_data.inputs.clone();
    current.labels = query_labels(victim, current.inputs, config.victim_k,
                                  victim_rng);
    current.class_count = victim.class_count();
    current.provenance = "substitute-queries";
    for (std::size_t t = 1; t <= config.outer_loops; ++t) {
        train_mlp(*substitute, current, tc, train_rng);
        if (t == config.outer_loops) break;
        const Tensor augmented = jacobian_augment(
            *substitute, current.inputs, current.labels, config.lambda);
        const std::vector<std::size_t> new_labels =
            query_labels(victim, augmented, config.victim_k, victim_rng);
        // D_{t+1} = D_t u augmented rows: exact doubling.
        const std::size_t n = current.size();
        const std::size_t d = current.input_dim();
        Tensor merged({2 * n, d});
        std::copy(current.inputs.data(), current.inputs.data() + n * d,
                  merged.data());
        std::copy(augmented.data(), augmented.data() + n * d,
                  merged.data() + n * d);
        current.inputs = merged;
        current.labels.insert(current.labels.end(), new_labels.begin(),
                              new_labels.end());
    }
    result.substitute = substitute;
    result.query_count = current.size();
    return result;
}

}  // namespace deepbayes
