#pragma once

#include <memory>
#include <optional>
#include <string>

#include "deepbayes/bnn.hpp"
#include "deepbayes/detect.hpp"
#include "deepbayes/model.hpp"
#include "deepbayes/two_rings.hpp"

namespace deepbayes {

// A checkpoint is <base>.json (manifest: kind, config, parameter names and
// shapes, seed, format version, optional calibration section) plus
// <base>.bin (all parameter tensors as little-endian f64, concatenated in
// manifest order).
struct ModelArtifact {
    std::shared_ptr<Classifier> model;
    std::optional<DetectorCalibration> calibration;
    std::uint64_t seed = 0;
    std::string id;
};

void save_checkpoint(const ModelArtifact& artifact,
                     const std::string& path_base);
ModelArtifact load_checkpoint(const std::string& path_base);

}  // namespace deepbayes
