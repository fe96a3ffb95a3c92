#pragma once

#include <string>
#include <utility>
#include <vector>

#include "deepbayes/rng.hpp"
#include "deepbayes/tensor.hpp"

namespace deepbayes {

struct DenseLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
};

// MLP with relu hidden activations, a linear output layer, and an optional
// conditioning input ("aux") appended to the first hidden layer's
// activations as a one-hot block; with no hidden layers the aux block is
// appended directly to the input, so the net stays affine in (main, aux).
class ConditionalNet {
public:
    ConditionalNet() = default;
    ConditionalNet(std::size_t main_dim, std::size_t aux_dim,
                   const std::vector<std::size_t>& hidden,
                   std::size_t out_dim, RngStream& rng);

    Tensor forward(const Tensor& main) const;
    Tensor forward(const Tensor& main, const Tensor& aux) const;

    std::size_t main_dim() const { return main_dim_; }
    std::size_t aux_dim() const { return aux_dim_; }
    std::size_t out_dim() const { return out_dim_; }

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    void collect_parameters(const std::string& prefix,
                            std::vector<std::pair<std::string, Tensor*>>& out);

private:
    std::size_t main_dim_ = 0;
    std::size_t aux_dim_ = 0;
    std::size_t out_dim_ = 0;
    std::vector<DenseLayer> layers_;
};

// He-uniform weight init: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng);

}  // namespace deepbayes
