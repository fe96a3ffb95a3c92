#include "deepbayes/checkpoint.hpp"

#include "deepbayes/errors.hpp"
#include "io_util.hpp"

namespace deepbayes {

namespace {

constexpr int kFormatVersion = 1;

nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["factorization"] = to_string(c.factorization);
    j["input_dim"] = c.input_dim;
    j["class_count"] = c.class_count;
    j["latent_dim"] = c.latent_dim;
    j["hidden"] = c.hidden;
    j["observation_variance"] = c.observation_variance;
    j["k_samples"] = c.k_samples;
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.factorization =
        factorization_from_string(j.at("factorization").get<std::string>());
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.class_count = j.at("class_count").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.observation_variance = j.at("observation_variance").get<double>();
    c.k_samples = j.at("k_samples").get<std::size_t>();
    return c;
}

nlohmann::json mlp_config_to_json(const MlpClassifierConfig& c) {
    nlohmann::json j;
    j["input_dim"] = c.input_dim;
    j["class_count"] = c.class_count;
    j["hidden"] = c.hidden;
    j["dropout_rate"] = c.dropout_rate;
    j["k_samples"] = c.k_samples;
    return j;
}

MlpClassifierConfig mlp_config_from_json(const nlohmann::json& j) {
    MlpClassifierConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.class_count = j.at("class_count").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.k_samples = j.at("k_samples").get<std::size_t>();
    return c;
}

nlohmann::json rings_to_json(const TwoRingsSpec& s) {
    nlohmann::json j;
    j["center0"] = s.center0;
    j["center1"] = s.center1;
    j["radius0"] = s.radius0;
    j["radius1"] = s.radius1;
    j["noise_std"] = s.noise_std;
    return j;
}

TwoRingsSpec rings_from_json(const nlohmann::json& j) {
    TwoRingsSpec s;
    s.center0 = j.at("center0").get<std::array<double, 2>>();
    s.center1 = j.at("center1").get<std::array<double, 2>>();
    s.radius0 = j.at("radius0").get<double>();
    s.radius1 = j.at("radius1").get<double>();
    s.noise_std = j.at("noise_std").get<double>();
    return s;
}

}  // namespace

void save_checkpoint(const ModelArtifact& artifact,
                     const std::string& path_base) {
    if (!artifact.model) throw ArtifactError("save_checkpoint: empty model");
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = artifact.model->kind();
    j["seed"] = artifact.seed;
    j["id"] = artifact.id;

    std::vector<double> blob;
    nlohmann::json params = nlohmann::json::array();
    auto append_params =
        [&](const std::vector<std::pair<std::string, Tensor*>>& named) {
            for (const auto& [name, t] : named) {
                params.push_back(
                    nlohmann::json{{"name", name}, {"shape", t->shape()}});
                blob.insert(blob.end(), t->values().begin(),
                            t->values().end());
            }
        };

    const std::string kind = artifact.model->kind();
    if (kind == "deep_bayes") {
        auto* m = dynamic_cast<DeepBayesModel*>(artifact.model.get());
        j["config"] = model_config_to_json(m->config());
        j["class_log_prior"] = m->class_log_prior().values();
        append_params(m->parameters());
    } else if (kind == "bnn" || kind == "mlp") {
        auto* m = dynamic_cast<MlpClassifier*>(artifact.model.get());
        j["config"] = mlp_config_to_json(m->config());
        append_params(m->parameters());
    } else if (kind == "two_rings") {
        auto* m = dynamic_cast<TwoRingsClassifier*>(artifact.model.get());
        j["config"] = rings_to_json(m->spec());
    } else {
        throw ArtifactError("save_checkpoint: unknown model kind " + kind);
    }
    j["params"] = params;
    if (artifact.calibration.has_value()) {
        j["calibration"] = calibration_to_json(*artifact.calibration);
    }
    io::save_json(j, path_base + ".json");
    io::write_f64_blob(path_base + ".bin", blob);
}

ModelArtifact load_checkpoint(const std::string& path_base) {
    const nlohmann::json j = io::load_json(path_base + ".json");
    if (j.value("format_version", 0) != kFormatVersion) {
        throw ArtifactError("checkpoint format version mismatch: " +
                            path_base);
    }
    ModelArtifact artifact;
    artifact.seed = j.value("seed", std::uint64_t{0});
    artifact.id = j.value("id", std::string());
    const std::string kind = j.at("kind").get<std::string>();

    std::vector<std::pair<std::string, Tensor*>> named;
    if (kind == "deep_bayes") {
        RngStream scratch(0);
        auto m = std::make_shared<DeepBayesModel>(
            model_config_from_json(j.at("config")), scratch);
        const std::vector<double> prior =
            j.at("class_log_prior").get<std::vector<double>>();
        if (prior.size() != m->class_count()) {
            throw ArtifactError("checkpoint prior size mismatch: " +
                                path_base);
        }
        m->set_class_log_prior(Tensor({prior.size()}, prior));
        named = m->parameters();
        artifact.model = m;
    } else if (kind == "bnn" || kind == "mlp") {
        RngStream scratch(0);
        auto m = std::make_shared<MlpClassifier>(
            mlp_config_from_json(j.at("config")), scratch);
        named = m->parameters();
        artifact.model = m;
    } else if (kind == "two_rings") {
        artifact.model = std::make_shared<TwoRingsClassifier>(
            rings_from_json(j.at("config")));
    } else {
        throw ArtifactError("load_checkpoint: unknown model kind " + kind);
    }

    const auto& params = j.at("params");
    if (params.size() != named.size()) {
        throw ArtifactError("checkpoint parameter count mismatch: " +
                            path_base);
    }
    std::size_t total = 0;
    for (const auto& pj : params) {
        total += shape_size(pj.at("shape").get<std::vector<std::size_t>>());
    }
    const std::vector<double> blob =
        total > 0 ? io::read_f64_blob(path_base + ".bin", total)
                  : std::vector<double>{};
    std::size_t off = 0;
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& pj = params[i];
        if (pj.at("name").get<std::string>() != named[i].first) {
            throw ArtifactError("checkpoint parameter order mismatch at " +
                                named[i].first);
        }
        const auto shape = pj.at("shape").get<std::vector<std::size_t>>();
        const std::size_t count = shape_size(shape);
        *named[i].second = Tensor(
            shape, std::vector<double>(blob.begin() + off,
                                       blob.begin() + off + count));
        off += count;
    }
    if (j.contains("calibration")) {
        artifact.calibration = calibration_from_json(j.at("calibration"));
    }
    return artifact;
}

}  // namespace deepbayes
