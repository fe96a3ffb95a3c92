#pragma once

#include <array>
#include <string>
#include <vector>

#include "deepbayes/rng.hpp"
#include "deepbayes/tensor.hpp"

namespace deepbayes {

// Immutable labelled dataset: inputs [N,D], integer labels in [0,C).
struct Dataset {
    Tensor inputs;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;
    std::string provenance;

    std::size_t size() const { return labels.size(); }
    std::size_t input_dim() const {
        return inputs.rank() == 2 ? inputs.dim(1) : 0;
    }
    void validate() const;
    std::vector<std::size_t> class_counts() const;
};

// Two concentric noisy rings: y ~ Bern(1/2) realized as fixed per-class
// counts, theta ~ U(0, 2pi), x|y ~ N(c_y + r_y [cos t, sin t], sigma^2 I).
struct TwoRingsSpec {
    std::array<double, 2> center0 = {0.0, 0.0};
    std::array<double, 2> center1 = {0.0, 0.0};
    double radius0 = 1.0;
    double radius1 = 2.0;
    double noise_std = 0.1;

    double noise_var() const { return noise_std * noise_std; }
    void validate() const;
};

Dataset sample_two_rings(const TwoRingsSpec& spec, std::size_t n_per_class,
                         RngStream& rng);

// Big-endian IDX image/label pair (magic 0x803 / 0x801); pixels -> [0,1].
Dataset load_idx(const std::string& image_path, const std::string& label_path);
void save_idx(const Dataset& data, const std::string& image_path,
              const std::string& label_path, std::size_t rows,
              std::size_t cols);

// Keep labels {a,b}, relabel a->0, b->1, preserving row order.
Dataset subset_binary(const Dataset& data, std::size_t class_a,
                      std::size_t class_b);

// Feature-vector datasets use the manifest+blob convention: <path>.json
// describing shapes plus <path>.bin of little-endian f64 rows.
struct FeatureDataset {
    Dataset data;
    std::string source;
};

FeatureDataset load_feature_vectors(const std::string& path_base);
void save_feature_vectors(const FeatureDataset& fd,
                          const std::string& path_base);

void export_csv(const Dataset& data, const std::string& path);

}  // namespace deepbayes
