#pragma once

#include <memory>

#include "deepbayes/bnn.hpp"
#include "deepbayes/model.hpp"

namespace deepbayes {

struct SubstituteConfig {
    std::size_t outer_loops = 6;  // T
    double lambda = 0.1;          // augmentation step
    std::vector<std::size_t> hidden = {128, 128};
    bool black_box = true;  // black: queried labels; grey: probability vectors
    std::size_t epochs_per_loop = 10;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    std::size_t victim_k = 10;  // K used when querying the victim

    void validate() const;
};

struct SubstituteResult {
    std::shared_ptr<MlpClassifier> substitute;
    std::size_t query_count = 0;
};

// Distill the victim into an MLP.
//
// Grey box: the attacker holds the seed inputs and the victim's probability
// vectors on them; the substitute minimizes soft-target cross-entropy for
// outer_loops * epochs_per_loop epochs. Queries = seed size.
//
// Black box: only queried labels are available. Each outer loop trains for
// epochs_per_loop epochs on D_t, then augments
//   D_{t+1} = D_t u { (x + lambda * grad_x p(x)^T y, victim label) },
// doubling the dataset; queries = |D_T| = |D_1| * 2^(T-1).
SubstituteResult train_substitute(const Classifier& victim,
                                  const SubstituteConfig& config,
                                  const Dataset& seed_data, RngStream& rng);

}  // namespace deepbayes
