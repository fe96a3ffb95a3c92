#include "deepbayes/model.hpp"

#include <cmath>

#include "deepbayes/errors.hpp"
#include "deepbayes/adam.hpp"
#include "deepbayes/log.hpp"
#include "deepbayes/tape.hpp"

namespace deepbayes {

std::string to_string(Factorization f) {
    switch (f) {
        case Factorization::GFZ: return "GFZ";
        case Factorization::GFY: return "GFY";
        case Factorization::GBZ: return "GBZ";
        case Factorization::GBY: return "GBY";
        case Factorization::DFX: return "DFX";
        case Factorization::DFZ: return "DFZ";
        case Factorization::DBX: return "DBX";
    }
    throw ConfigError("unknown factorization tag");
}

Factorization factorization_from_string(const std::string& s) {
    if (s == "GFZ") return Factorization::GFZ;
    if (s == "GFY") return Factorization::GFY;
    if (s == "GBZ") return Factorization::GBZ;
    if (s == "GBY") return Factorization::GBY;
    if (s == "DFX") return Factorization::DFX;
    if (s == "DFZ") return Factorization::DFZ;
    if (s == "DBX") return Factorization::DBX;
    throw ConfigError("unknown factorization tag: " + s);
}

bool is_generative(Factorization f) {
    return f == Factorization::GFZ || f == Factorization::GFY ||
           f == Factorization::GBZ || f == Factorization::GBY;
}

bool is_bottleneck(Factorization f) {
    return f == Factorization::GBZ || f == Factorization::GBY ||
           f == Factorization::DBX;
}

bool has_marginal_density(Factorization f) {
    return is_generative(f) || f == Factorization::DFZ;
}

void ModelConfig::validate() const {
    if (input_dim < 1) throw ConfigError("ModelConfig: input_dim must be >= 1");
    if (class_count < 1) {
        throw ConfigError("ModelConfig: class_count must be >= 1");
    }
    if (latent_dim < 1) {
        throw ConfigError("ModelConfig: latent_dim must be >= 1");
    }
    if (k_samples < 1) throw ConfigError("ModelConfig: k_samples must be >= 1");
    if (observation_variance < 1e-8) {
        throw ConfigError(
            "ModelConfig: observation_variance below the 1e-8 variance floor");
    }
}

Prediction predict(const Classifier& model, const Tensor& x, std::size_t k,
                   RngStream& rng) {
    Prediction out;
    out.logits = model.class_logits(x, k, rng);
    out.posterior = softmax(out.logits);
    out.labels = argmax_last(out.logits);
    return out;
}

Tensor marginal_from_logits(const Classifier& model, const Tensor& logits) {
    if (!model.has_density()) {
        throw DensityUnavailable("marginal_log_density: model kind '" +
                                 model.kind() +
                                 "' has no density over x (reported N/A)");
    }
    return log_sum_exp(logits);
}

Tensor marginal_log_density(const Classifier& model, const Tensor& x,
                            std::size_t k, RngStream& rng) {
    if (!model.has_density()) {
        throw DensityUnavailable("marginal_log_density: model kind '" +
                                 model.kind() +
                                 "' has no density over x (reported N/A)");
    }
    return marginal_from_logits(model, model.class_logits(x, k, rng));
}

namespace {

// Constant per-row log prior picked by the one-hot label; no gradient is
// needed through this term (it is constant in x and in the parameters).
Tensor prior_rows(const Tensor& class_log_prior, const Tensor& y_onehot) {
    const std::size_t n = y_onehot.dim(0);
    const std::size_t c = y_onehot.dim(1);
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (y_onehot.at(i, j) > y_onehot.at(i, best)) best = j;
        }
        out.data()[i] = class_log_prior.at(best);
    }
    return out;
}

void check_finite(const Tensor& t, const char* conditional) {
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite log-density from ") +
                           conditional);
    }
}

std::pair<Tensor, Tensor> split_gaussian_head(const Tensor& out,
                                              std::size_t dz) {
    return {slice_last(out, 0, dz), slice_last(out, dz, dz)};
}

}  // namespace

DeepBayesModel::DeepBayesModel(ModelConfig config, RngStream& rng)
    : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.input_dim;
    const std::size_t c = config_.class_count;
    const std::size_t dz = config_.latent_dim;
    const auto& hidden = config_.hidden;

    encoder_ = ConditionalNet(d, c, hidden, 2 * dz, rng);
    switch (config_.factorization) {
        case Factorization::GFZ:
            p_y_z_.emplace(dz, 0, hidden, c, rng);
            p_x_zy_.emplace(dz, c, hidden, d, rng);
            break;
        case Factorization::GFY:
            p_z_y_.emplace(c, 0, hidden, 2 * dz, rng);
            p_x_zy_.emplace(dz, c, hidden, d, rng);
            break;
        case Factorization::GBZ:
            p_y_z_.emplace(dz, 0, hidden, c, rng);
            p_x_z_.emplace(dz, 0, hidden, d, rng);
            break;
        case Factorization::GBY:
            p_z_y_.emplace(c, 0, hidden, 2 * dz, rng);
            p_x_z_.emplace(dz, 0, hidden, d, rng);
            break;
        case Factorization::DFX:
            p_z_x_.emplace(d, 0, hidden, 2 * dz, rng);
            p_y_zx_.emplace(d, dz, hidden, c, rng);
            break;
        case Factorization::DFZ:
            p_x_z_.emplace(dz, 0, hidden, d, rng);
            p_y_zx_.emplace(d, dz, hidden, c, rng);
            break;
        case Factorization::DBX:
            p_z_x_.emplace(d, 0, hidden, 2 * dz, rng);
            p_y_z_.emplace(dz, 0, hidden, c, rng);
            break;
    }
    // Uniform prior until training supplies empirical frequencies.
    class_log_prior_ =
        Tensor::full({c}, -std::log(static_cast<double>(c)));
}

std::pair<Tensor, Tensor> DeepBayesModel::encode(const Tensor& x,
                                                 const Tensor& y_onehot) const {
    return split_gaussian_head(encoder_.forward(x, y_onehot),
                               config_.latent_dim);
}

Tensor DeepBayesModel::log_joint(const Tensor& x, const Tensor& z,
                                 const Tensor& y_onehot) const {
    const Factorization f = config_.factorization;
    const Tensor obs_log_var =
        Tensor::scalar(std::log(config_.observation_variance));
    Tensor total;

    // z factor
    if (f == Factorization::GFZ || f == Factorization::GBZ ||
        f == Factorization::DFZ) {
        total = gaussian_log_density(z, Tensor::zeros(z.shape()),
                                     Tensor::zeros(z.shape()));
    } else if (f == Factorization::GFY || f == Factorization::GBY) {
        auto [m, lv] = split_gaussian_head(p_z_y_->forward(y_onehot),
                                           config_.latent_dim);
        total = gaussian_log_density(z, m, lv);
        check_finite(total, "p(z|y)");
    } else {  // DFX, DBX
        auto [m, lv] =
            split_gaussian_head(p_z_x_->forward(x), config_.latent_dim);
        total = gaussian_log_density(z, m, lv);
        check_finite(total, "p(z|x)");
    }

    // y factor
    if (f == Factorization::GFY || f == Factorization::GBY) {
        total = add(total, prior_rows(class_log_prior_, y_onehot));
    } else if (f == Factorization::GFZ || f == Factorization::GBZ ||
               f == Factorization::DBX) {
        Tensor ly = sum_last(mul(log_softmax(p_y_z_->forward(z)), y_onehot));
        check_finite(ly, "p(y|z)");
        total = add(total, ly);
    } else {  // DFX, DFZ
        Tensor ly =
            sum_last(mul(log_softmax(p_y_zx_->forward(x, z)), y_onehot));
        check_finite(ly, "p(y|z,x)");
        total = add(total, ly);
    }

    // x factor (absent for DFX/DBX: p_D(x) is cancelled in Bayes' rule)
    if (f == Factorization::GFZ || f == Factorization::GFY) {
        Tensor lx =
            gaussian_log_density(x, p_x_zy_->forward(z, y_onehot), obs_log_var);
        check_finite(lx, "p(x|z,y)");
        total = add(total, lx);
    } else if (f == Factorization::GBZ || f == Factorization::GBY ||
               f == Factorization::DFZ) {
        Tensor lx = gaussian_log_density(x, p_x_z_->forward(z), obs_log_var);
        check_finite(lx, "p(x|z)");
        total = add(total, lx);
    }
    return total;
}

Tensor DeepBayesModel::elbo(const Tensor& x, const Tensor& y_onehot,
                            RngStream& rng) const {
    auto [m, lv] = encode(x, y_onehot);
    const Tensor z = reparameterize(m, lv, rng);
    Tensor logq = gaussian_log_density(z, m, lv);
    check_finite(logq, "q(z|x,y)");
    return mean(sub(log_joint(x, z, y_onehot), logq));
}

Tensor DeepBayesModel::class_logits(const Tensor& x, std::size_t k,
                                    RngStream& rng) const {
    if (k < 1) throw ConfigError("class_logits: K must be >= 1");
    const std::size_t n = x.dim(0);
    const std::size_t c = config_.class_count;
    const double log_k = std::log(static_cast<double>(k));
    std::vector<Tensor> per_class;
    per_class.reserve(c);
    for (std::size_t cls = 0; cls < c; ++cls) {
        const Tensor y_c = one_hot(std::vector<std::size_t>(n, cls), c);
        auto [m, lv] = encode(x, y_c);
        std::vector<Tensor> weights;
        weights.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            const Tensor z = reparameterize(m, lv, rng);
            weights.push_back(
                sub(log_joint(x, z, y_c), gaussian_log_density(z, m, lv)));
        }
        per_class.push_back(sub(log_sum_exp(stack_last(weights)),
                                Tensor::scalar(log_k)));
    }
    return stack_last(per_class);
}

std::vector<std::vector<Tensor>> DeepBayesModel::freeze_samples(
    const Tensor& x, std::size_t k, RngStream& rng) const {
    if (k < 1) throw ConfigError("freeze_samples: K must be >= 1");
    const std::size_t n = x.dim(0);
    const std::size_t c = config_.class_count;
    std::vector<std::vector<Tensor>> out(c);
    for (std::size_t cls = 0; cls < c; ++cls) {
        const Tensor y_c = one_hot(std::vector<std::size_t>(n, cls), c);
        auto [m, lv] = encode(x, y_c);
        out[cls].reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            out[cls].push_back(reparameterize(m, lv, rng).clone());
        }
    }
    return out;
}

Tensor DeepBayesModel::sample_logits(
    const Tensor& x, const std::vector<Tensor>& z_per_class) const {
    const std::size_t n = x.dim(0);
    const std::size_t c = config_.class_count;
    if (z_per_class.size() != c) {
        throw ShapeError("sample_logits: expected one z tensor per class");
    }
    std::vector<Tensor> per_class;
    per_class.reserve(c);
    for (std::size_t cls = 0; cls < c; ++cls) {
        const Tensor y_c = one_hot(std::vector<std::size_t>(n, cls), c);
        auto [m, lv] = encode(x, y_c);
        per_class.push_back(sub(log_joint(x, z_per_class[cls], y_c),
                                gaussian_log_density(z_per_class[cls], m, lv)));
    }
    return stack_last(per_class);
}

std::vector<std::pair<std::string, Tensor*>> DeepBayesModel::parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    encoder_.collect_parameters("q", out);
    if (p_z_y_) p_z_y_->collect_parameters("p_z_y", out);
    if (p_y_z_) p_y_z_->collect_parameters("p_y_z", out);
    if (p_x_zy_) p_x_zy_->collect_parameters("p_x_zy", out);
    if (p_x_z_) p_x_z_->collect_parameters("p_x_z", out);
    if (p_z_x_) p_z_x_->collect_parameters("p_z_x", out);
    if (p_y_zx_) p_y_zx_->collect_parameters("p_y_zx", out);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> DeepBayesModel::parameters()
    const {
    auto mut = const_cast<DeepBayesModel*>(this)->parameters();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

void DeepBayesModel::set_class_prior_from_counts(
    const std::vector<std::size_t>& counts) {
    if (counts.size() != config_.class_count) {
        throw ShapeError("set_class_prior_from_counts: got " +
                         std::to_string(counts.size()) + " counts for " +
                         std::to_string(config_.class_count) + " classes");
    }
    std::size_t total = 0;
    for (std::size_t n : counts) total += n;
    if (total == 0) throw ConfigError("class prior: no labels");
    Tensor lp({config_.class_count});
    for (std::size_t i = 0; i < counts.size(); ++i) {
        lp.data()[i] = std::log(static_cast<double>(counts[i]) /
                                static_cast<double>(total));
    }
    class_log_prior_ = lp;
}

void DeepBayesModel::set_class_log_prior(Tensor log_prior) {
    if (log_prior.shape() != std::vector<std::size_t>{config_.class_count}) {
        throw ShapeError("set_class_log_prior: expected [" +
                         std::to_string(config_.class_count) + "], got " +
                         log_prior.shape_str());
    }
    class_log_prior_ = std::move(log_prior);
}

TrainResult train(DeepBayesModel& model, const Dataset& data,
                  const TrainConfig& config, RngStream& rng) {
    data.validate();
    if (data.input_dim() != model.input_dim() ||
        data.class_count != model.class_count()) {
        throw ShapeError("train: dataset does not match model dimensions");
    }
    TrainResult result;
    if (config.epochs == 0) return result;  // model left untouched

    model.set_class_prior_from_counts(data.class_counts());
    const Tensor y_all = one_hot(data.labels, data.class_count);

    auto named = model.parameters();
    std::vector<Tensor> params;
    params.reserve(named.size());
    for (auto& [name, t] : named) params.push_back(*t);
    AdamState adam(params, AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});

    const std::size_t n = data.size();
    const std::size_t bs =
        config.batch_size == 0 ? n : std::min(config.batch_size, n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    const std::size_t dim = data.input_dim();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_elbo = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t count = std::min(bs, n - start);
            Tensor xb({count, dim});
            Tensor yb({count, data.class_count});
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t src = order[start + i];
                std::copy(data.inputs.data() + src * dim,
                          data.inputs.data() + (src + 1) * dim,
                          xb.data() + i * dim);
                std::copy(y_all.data() + src * data.class_count,
                          y_all.data() + (src + 1) * data.class_count,
                          yb.data() + i * data.class_count);
            }
            GradientTape tape;
            for (Tensor& p : params) tape.watch(p);
            Tensor objective;
            try {
                objective = model.elbo(xb, yb, rng);
            } catch (const NumericError& e) {
                throw NumericError("train: diverged at epoch " +
                                   std::to_string(epoch) + ": " + e.what());
            }
            const double value = objective.item();
            if (!std::isfinite(value)) {
                throw NumericError("train: non-finite ELBO at epoch " +
                                   std::to_string(epoch));
            }
            epoch_elbo += value * static_cast<double>(count);
            const Tensor loss = -objective;
            Gradients grads = tape.backward(loss);
            std::vector<Tensor> g;
            g.reserve(params.size());
            for (Tensor& p : params) g.push_back(grads.wrt(p));
            adam.step(params, g);
            // Adam writes fresh tensors; re-point the model at them.
            for (std::size_t i = 0; i < named.size(); ++i) {
                *named[i].second = params[i];
            }
        }
        result.loss_trace.push_back(epoch_elbo / static_cast<double>(n));
        if ((epoch + 1) % 50 == 0 || epoch + 1 == config.epochs) {
            logging::info("epoch " + std::to_string(epoch + 1) + "/" +
                      std::to_string(config.epochs) + " mean ELBO " +
                      std::to_string(result.loss_trace.back()));
        }
    }
    return result;
}

}  // namespace deepbayes
