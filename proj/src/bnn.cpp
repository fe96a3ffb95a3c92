#include "deepbayes/bnn.hpp"

#include <cmath>

#include "deepbayes/adam.hpp"
#include "deepbayes/errors.hpp"
#include "deepbayes/ops.hpp"
#include "deepbayes/tape.hpp"

namespace deepbayes {

void MlpClassifierConfig::validate() const {
    if (input_dim < 1 || class_count < 1) {
        throw ConfigError("MlpClassifier: dimensions must be >= 1");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("MlpClassifier: dropout rate must lie in [0,1)");
    }
    if (k_samples < 1) throw ConfigError("MlpClassifier: k_samples must be >= 1");
}

MlpClassifier::MlpClassifier(MlpClassifierConfig config, RngStream& rng)
    : config_(std::move(config)) {
    config_.validate();
    std::vector<std::size_t> widths;
    widths.push_back(config_.input_dim);
    for (std::size_t h : config_.hidden) widths.push_back(h);
    widths.push_back(config_.class_count);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        layers_.push_back(DenseLayer{he_uniform(widths[i], widths[i + 1], rng),
                                     Tensor::zeros({widths[i + 1]})});
    }
}

Tensor MlpClassifier::raw_scores(const Tensor& x,
                                 RngStream* dropout_rng) const {
    if (x.rank() != 2 || x.dim(1) != config_.input_dim) {
        throw ShapeError("MlpClassifier: input " + x.shape_str() +
                         " does not match width " +
                         std::to_string(config_.input_dim));
    }
    const double rate = config_.dropout_rate;
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = add(matmul(h, layers_[i].weight), layers_[i].bias);
        if (i + 1 < layers_.size()) {
            h = relu(h);
            if (rate > 0.0 && dropout_rng != nullptr) {
                // Inverted dropout: kept units scaled by 1/(1-rate).
                Tensor mask(h.shape());
                const double scale = 1.0 / (1.0 - rate);
                for (std::size_t j = 0; j < mask.size(); ++j) {
                    mask.data()[j] =
                        dropout_rng->bernoulli(rate) ? 0.0 : scale;
                }
                h = mul(h, mask);
            }
        }
    }
    return h;
}

Tensor MlpClassifier::class_logits(const Tensor& x, std::size_t k,
                                   RngStream& rng) const {
    if (k < 1) throw ConfigError("class_logits: K must be >= 1");
    if (config_.dropout_rate == 0.0) {
        return raw_scores(x, nullptr);
    }
    // Average the K masked softmax outputs, then return its log so that
    // softmax(logits) equals the dropout posterior.
    Tensor acc = softmax(raw_scores(x, &rng));
    for (std::size_t i = 1; i < k; ++i) {
        acc = add(acc, softmax(raw_scores(x, &rng)));
    }
    return log(mul(acc, Tensor::scalar(1.0 / static_cast<double>(k))));
}

std::vector<std::pair<std::string, Tensor*>> MlpClassifier::parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        out.emplace_back("net.w" + std::to_string(i), &layers_[i].weight);
        out.emplace_back("net.b" + std::to_string(i), &layers_[i].bias);
    }
    return out;
}

namespace {

TrainResult train_mlp_impl(MlpClassifier& model, const Tensor& inputs,
                           const Tensor& targets, const TrainConfig& config,
                           RngStream& rng) {
    TrainResult result;
    if (config.epochs == 0) return result;
    auto named = model.parameters();
    std::vector<Tensor> params;
    for (auto& [name, t] : named) params.push_back(*t);
    AdamState adam(params, AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});

    const std::size_t n = inputs.dim(0);
    const std::size_t dim = inputs.dim(1);
    const std::size_t c = targets.dim(1);
    const std::size_t bs =
        config.batch_size == 0 ? n : std::min(config.batch_size, n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const bool use_dropout = model.config().dropout_rate > 0.0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t count = std::min(bs, n - start);
            Tensor xb({count, dim});
            Tensor tb({count, c});
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t src = order[start + i];
                std::copy(inputs.data() + src * dim,
                          inputs.data() + (src + 1) * dim,
                          xb.data() + i * dim);
                std::copy(targets.data() + src * c,
                          targets.data() + (src + 1) * c, tb.data() + i * c);
            }
            GradientTape tape;
            for (Tensor& p : params) tape.watch(p);
            const Tensor scores =
                model.raw_scores(xb, use_dropout ? &rng : nullptr);
            const Tensor loss = -mean(sum_last(mul(log_softmax(scores), tb)));
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericError("train_mlp: non-finite loss at epoch " +
                                   std::to_string(epoch));
            }
            epoch_loss += value * static_cast<double>(count);
            Gradients grads = tape.backward(loss);
            std::vector<Tensor> g;
            for (Tensor& p : params) g.push_back(grads.wrt(p));
            adam.step(params, g);
            for (std::size_t i = 0; i < named.size(); ++i) {
                *named[i].second = params[i];
            }
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
    }
    return result;
}

}  // namespace

TrainResult train_mlp(MlpClassifier& model, const Dataset& data,
                      const TrainConfig& config, RngStream& rng) {
    data.validate();
    if (data.input_dim() != model.input_dim() ||
        data.class_count != model.class_count()) {
        throw ShapeError("train_mlp: dataset does not match model dimensions");
    }
    return train_mlp_impl(model, data.inputs,
                          one_hot(data.labels, data.class_count), config, rng);
}

TrainResult train_mlp_soft(MlpClassifier& model, const Tensor& inputs,
                           const Tensor& target_probs,
                           const TrainConfig& config, RngStream& rng) {
    if (inputs.rank() != 2 || target_probs.rank() != 2 ||
        inputs.dim(0) != target_probs.dim(0) ||
        target_probs.dim(1) != model.class_count()) {
        throw ShapeError("train_mlp_soft: inputs " + inputs.shape_str() +
                         " vs targets " + target_probs.shape_str());
    }
    return train_mlp_impl(model, inputs, target_probs, config, rng);
}

}  // namespace deepbayes
