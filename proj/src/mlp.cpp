#include "deepbayes/mlp.hpp"

#include <cmath>

#include "deepbayes/errors.hpp"
#include "deepbayes/ops.hpp"

namespace deepbayes {

Tensor he_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    return Tensor({fan_in, fan_out},
                  rng.uniforms(fan_in * fan_out, -limit, limit));
}

ConditionalNet::ConditionalNet(std::size_t main_dim, std::size_t aux_dim,
                               const std::vector<std::size_t>& hidden,
                               std::size_t out_dim, RngStream& rng)
    : main_dim_(main_dim), aux_dim_(aux_dim), out_dim_(out_dim) {
    std::vector<std::size_t> widths;
    widths.push_back(main_dim);
    for (std::size_t h : hidden) widths.push_back(h);
    widths.push_back(out_dim);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        std::size_t in = widths[i];
        // Aux rides into the layer after the first hidden layer; with no
        // hidden layers it extends the input itself.
        if ((hidden.empty() && i == 0) || (!hidden.empty() && i == 1)) {
            in += aux_dim;
        }
        layers_.push_back(
            DenseLayer{he_uniform(in, widths[i + 1], rng),
                       Tensor::zeros({widths[i + 1]})});
    }
}

Tensor ConditionalNet::forward(const Tensor& main) const {
    if (aux_dim_ != 0) {
        throw ShapeError("ConditionalNet: aux input of width " +
                         std::to_string(aux_dim_) + " required");
    }
    return forward(main, Tensor());
}

Tensor ConditionalNet::forward(const Tensor& main, const Tensor& aux) const {
    if (main.rank() != 2 || main.dim(1) != main_dim_) {
        throw ShapeError("ConditionalNet: input " + main.shape_str() +
                         " does not match main width " +
                         std::to_string(main_dim_));
    }
    if (aux_dim_ != 0 && (!aux.defined() || aux.rank() != 2 ||
                          aux.dim(1) != aux_dim_ || aux.dim(0) != main.dim(0))) {
        throw ShapeError("ConditionalNet: aux input does not match width " +
                         std::to_string(aux_dim_));
    }
    const bool has_hidden = layers_.size() > 1;
    Tensor h = main;
    if (!has_hidden && aux_dim_ != 0) h = concat_last(h, aux);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = add(matmul(h, layers_[i].weight), layers_[i].bias);
        const bool is_output = (i + 1 == layers_.size());
        if (!is_output) {
            h = relu(h);
            if (i == 0 && aux_dim_ != 0) h = concat_last(h, aux);
        }
    }
    return h;
}

void ConditionalNet::collect_parameters(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor*>>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        out.emplace_back(prefix + ".w" + std::to_string(i),
                         &layers_[i].weight);
        out.emplace_back(prefix + ".b" + std::to_string(i),
                         &layers_[i].bias);
    }
}

}  // namespace deepbayes
