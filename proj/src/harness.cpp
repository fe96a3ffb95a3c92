#include "deepbayes/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "deepbayes/errors.hpp"
#include "deepbayes/log.hpp"
#include "io_util.hpp"

namespace deepbayes {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
    return v.has_value() ? fmt(*v) : "N/A";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ArtifactError("cannot create directory " + dir);
}

TwoRingsSpec rings_from_json_cfg(const nlohmann::json& j) {
    TwoRingsSpec s;
    if (j.contains("center0")) s.center0 = j.at("center0").get<std::array<double, 2>>();
    if (j.contains("center1")) s.center1 = j.at("center1").get<std::array<double, 2>>();
    s.radius0 = j.value("radius0", s.radius0);
    s.radius1 = j.value("radius1", s.radius1);
    s.noise_std = j.value("noise_std", s.noise_std);
    return s;
}

nlohmann::json rings_to_json_cfg(const TwoRingsSpec& s) {
    return nlohmann::json{{"center0", s.center0},
                          {"center1", s.center1},
                          {"radius0", s.radius0},
                          {"radius1", s.radius1},
                          {"noise_std", s.noise_std}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        if (!j.contains("seed")) {
            throw ConfigError("config: explicit seed required");
        }
        c.seed = j.at("seed").get<std::uint64_t>();
        c.k_samples = j.value("k_samples", c.k_samples);

        const auto& data = j.at("dataset");
        c.dataset_kind = data.value("kind", c.dataset_kind);
        if (data.contains("rings")) {
            c.rings = rings_from_json_cfg(data.at("rings"));
        }
        c.n_per_class = data.value("n_per_class", c.n_per_class);
        c.test_n_per_class = data.value("test_n_per_class", c.test_n_per_class);
        c.idx_images = data.value("images", std::string());
        c.idx_labels = data.value("labels", std::string());
        c.idx_test_images = data.value("test_images", std::string());
        c.idx_test_labels = data.value("test_labels", std::string());
        c.feature_path = data.value("feature_path", std::string());
        if (data.contains("binary_subset")) {
            const auto pair =
                data.at("binary_subset").get<std::vector<std::size_t>>();
            if (pair.size() != 2) {
                throw ConfigError("config: binary_subset needs two classes");
            }
            c.binary_subset = {pair[0], pair[1]};
        }

        for (const auto& mj : j.at("models")) {
            ModelEntry e;
            e.id = mj.at("id").get<std::string>();
            e.type = mj.value("type", std::string("deep_bayes"));
            if (e.type == "deep_bayes") {
                e.model.factorization = factorization_from_string(
                    mj.at("factorization").get<std::string>());
                e.model.input_dim = mj.value("input_dim", std::size_t{2});
                e.model.class_count = mj.value("class_count", std::size_t{2});
                e.model.latent_dim = mj.value("latent_dim", std::size_t{2});
                e.model.hidden = mj.value("hidden",
                                          std::vector<std::size_t>{128, 128});
                e.model.observation_variance =
                    mj.value("observation_variance", 1.0);
                e.model.k_samples = c.k_samples;
            } else if (e.type == "bnn" || e.type == "mlp") {
                e.mlp.input_dim = mj.value("input_dim", std::size_t{2});
                e.mlp.class_count = mj.value("class_count", std::size_t{2});
                e.mlp.hidden = mj.value("hidden",
                                        std::vector<std::size_t>{256, 256});
                e.mlp.dropout_rate =
                    mj.value("dropout_rate", e.type == "bnn" ? 0.3 : 0.0);
                e.mlp.k_samples = c.k_samples;
            } else if (e.type == "two_rings") {
                e.rings = mj.contains("rings")
                              ? rings_from_json_cfg(mj.at("rings"))
                              : c.rings;
            } else {
                throw ConfigError("config: unknown model type " + e.type);
            }
            c.models.push_back(std::move(e));
        }

        if (j.contains("train")) {
            const auto& tj = j.at("train");
            c.train.epochs = tj.value("epochs", c.train.epochs);
            c.train.batch_size = tj.value("batch_size", c.train.batch_size);
            c.train.learning_rate =
                tj.value("learning_rate", c.train.learning_rate);
        }
        if (j.contains("detection")) {
            const auto& dj = j.at("detection");
            const std::string mode = dj.value("mode", std::string("target_fpr"));
            c.calib_mode = mode == "alpha" ? CalibrationMode::Alpha
                                           : CalibrationMode::TargetFpr;
            c.calib_parameter = dj.value("parameter", c.calib_parameter);
        }
        for (const auto& aj : j.value("attacks", nlohmann::json::array())) {
            AttackGrid grid;
            grid.base = attack_config_from_json(aj);
            grid.settings = aj.at("settings").get<std::vector<double>>();
            grid.model_ids =
                aj.value("models", std::vector<std::string>{});
            c.attacks.push_back(std::move(grid));
        }
        c.attack_count = j.value("attack_count", c.attack_count);
        for (const auto& tj : j.value("transfers", nlohmann::json::array())) {
            c.transfers.push_back(TransferSpec{
                tj.at("source").get<std::string>(),
                tj.at("target").get<std::string>(),
                tj.at("attack").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_json(io::load_json(path));
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["seed"] = seed;
    j["k_samples"] = k_samples;
    nlohmann::json data;
    data["kind"] = dataset_kind;
    data["rings"] = rings_to_json_cfg(rings);
    data["n_per_class"] = n_per_class;
    data["test_n_per_class"] = test_n_per_class;
    if (!idx_images.empty()) data["images"] = idx_images;
    if (!idx_labels.empty()) data["labels"] = idx_labels;
    if (!idx_test_images.empty()) data["test_images"] = idx_test_images;
    if (!idx_test_labels.empty()) data["test_labels"] = idx_test_labels;
    if (!feature_path.empty()) data["feature_path"] = feature_path;
    if (binary_subset) {
        data["binary_subset"] = std::vector<std::size_t>{
            binary_subset->first, binary_subset->second};
    }
    j["dataset"] = data;
    nlohmann::json model_list = nlohmann::json::array();
    for (const ModelEntry& e : models) {
        nlohmann::json mj;
        mj["id"] = e.id;
        mj["type"] = e.type;
        if (e.type == "deep_bayes") {
            mj["factorization"] = to_string(e.model.factorization);
            mj["input_dim"] = e.model.input_dim;
            mj["class_count"] = e.model.class_count;
            mj["latent_dim"] = e.model.latent_dim;
            mj["hidden"] = e.model.hidden;
            mj["observation_variance"] = e.model.observation_variance;
        } else if (e.type == "bnn" || e.type == "mlp") {
            mj["input_dim"] = e.mlp.input_dim;
            mj["class_count"] = e.mlp.class_count;
            mj["hidden"] = e.mlp.hidden;
            mj["dropout_rate"] = e.mlp.dropout_rate;
        } else {
            mj["rings"] = rings_to_json_cfg(e.rings);
        }
        model_list.push_back(mj);
    }
    j["models"] = model_list;
    j["train"] = nlohmann::json{{"epochs", train.epochs},
                                {"batch_size", train.batch_size},
                                {"learning_rate", train.learning_rate}};
    j["detection"] = nlohmann::json{{"mode", to_string(calib_mode)},
                                    {"parameter", calib_parameter}};
    nlohmann::json attack_list = nlohmann::json::array();
    for (const AttackGrid& grid : attacks) {
        nlohmann::json aj = attack_config_to_json(grid.base);
        aj["settings"] = grid.settings;
        if (!grid.model_ids.empty()) aj["models"] = grid.model_ids;
        attack_list.push_back(aj);
    }
    j["attacks"] = attack_list;
    j["attack_count"] = attack_count;
    nlohmann::json transfer_list = nlohmann::json::array();
    for (const TransferSpec& t : transfers) {
        transfer_list.push_back(nlohmann::json{
            {"source", t.source}, {"target", t.target}, {"attack", t.attack}});
    }
    j["transfers"] = transfer_list;
    return j;
}

void ExperimentConfig::validate() const {
    if (models.empty()) throw ConfigError("config: at least one model");
    for (const AttackGrid& grid : attacks) {
        if (grid.settings.empty()) {
            throw ConfigError("config: attack settings list is empty");
        }
        for (std::size_t i = 1; i < grid.settings.size(); ++i) {
            if (grid.settings[i] <= grid.settings[i - 1]) {
                throw ConfigError(
                    "config: attack settings must be strictly increasing");
            }
        }
        grid.base.validate();
    }
    std::vector<std::string> ids;
    for (const ModelEntry& e : models) {
        if (std::find(ids.begin(), ids.end(), e.id) != ids.end()) {
            throw ConfigError("config: duplicate model id " + e.id);
        }
        ids.push_back(e.id);
    }
}

std::string model_path(const std::string& out_dir, const std::string& id) {
    return out_dir + "/model_" + id;
}

std::string batch_path(const std::string& out_dir, const std::string& model_id,
                       const std::string& attack) {
    return out_dir + "/batch_" + model_id + "_" + attack;
}

Dataset load_train_dataset(const ExperimentConfig& config) {
    if (config.dataset_kind == "two_rings") {
        RngStream rng = RngStream(config.seed).child(hash64("data-train"));
        return sample_two_rings(config.rings, config.n_per_class, rng);
    }
    Dataset data;
    if (config.dataset_kind == "idx") {
        data = load_idx(config.idx_images, config.idx_labels);
    } else if (config.dataset_kind == "features") {
        data = load_feature_vectors(config.feature_path).data;
    } else {
        throw ConfigError("config: unknown dataset kind " +
                          config.dataset_kind);
    }
    if (config.binary_subset) {
        data = subset_binary(data, config.binary_subset->first,
                             config.binary_subset->second);
    }
    return data;
}

Dataset load_attack_dataset(const ExperimentConfig& config) {
    Dataset data;
    if (config.dataset_kind == "two_rings") {
        RngStream rng = RngStream(config.seed).child(hash64("data-test"));
        data = sample_two_rings(config.rings, config.test_n_per_class, rng);
    } else if (config.dataset_kind == "idx") {
        const std::string img = config.idx_test_images.empty()
                                    ? config.idx_images
                                    : config.idx_test_images;
        const std::string lab = config.idx_test_labels.empty()
                                    ? config.idx_labels
                                    : config.idx_test_labels;
        data = load_idx(img, lab);
        if (config.binary_subset) {
            data = subset_binary(data, config.binary_subset->first,
                                 config.binary_subset->second);
        }
    } else if (config.dataset_kind == "features") {
        data = load_feature_vectors(config.feature_path).data;
        if (config.binary_subset) {
            data = subset_binary(data, config.binary_subset->first,
                                 config.binary_subset->second);
        }
    } else {
        throw ConfigError("config: unknown dataset kind " +
                          config.dataset_kind);
    }
    if (config.attack_count > 0 && config.attack_count < data.size()) {
        const std::size_t n = config.attack_count;
        const std::size_t d = data.input_dim();
        Tensor inputs({n, d},
                      std::vector<double>(data.inputs.data(),
                                          data.inputs.data() + n * d));
        data.inputs = inputs;
        data.labels.resize(n);
        data.provenance += ":first" + std::to_string(n);
    }
    return data;
}

namespace {

std::shared_ptr<Classifier> build_model(const ModelEntry& entry,
                                        RngStream& rng) {
    if (entry.type == "deep_bayes") {
        return std::make_shared<DeepBayesModel>(entry.model, rng);
    }
    if (entry.type == "bnn" || entry.type == "mlp") {
        return std::make_shared<MlpClassifier>(entry.mlp, rng);
    }
    return std::make_shared<TwoRingsClassifier>(entry.rings);
}

void write_trace(const std::vector<double>& trace, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ArtifactError("cannot open for write: " + path);
    f << "epoch,mean_elbo_or_loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        f << i + 1 << ',' << fmt_full(trace[i]) << '\n';
    }
}

std::uint64_t eval_stream_tag(const std::string& target_id,
                              const std::string& attack,
                              std::size_t setting_index,
                              const std::string& source_id) {
    return hash64("eval:" + target_id + ":" + attack + ":" +
                  std::to_string(setting_index) + ":" + source_id);
}

// Statistics and decisions for one crafted grid entry against a model.
void evaluate_into(AttackSettingResult& s, const Classifier& model,
                   const DetectorCalibration& calib,
                   const std::vector<std::size_t>& true_labels, std::size_t k,
                   RngStream rng) {
    const std::vector<InputEvaluation> evals =
        evaluate_batch(model, s.crafted, k, rng);
    const std::size_t n = evals.size();
    s.predicted.resize(n);
    s.success.resize(n);
    s.stat_marginal.assign(n, std::numeric_limits<double>::quiet_NaN());
    s.stat_logit.assign(n, std::numeric_limits<double>::quiet_NaN());
    s.stat_kl.assign(n, 0.0);
    s.stat_tv.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        s.predicted[i] = evals[i].predicted;
        s.success[i] = evals[i].predicted != true_labels[i];
        if (calib.density_available && evals[i].density_available) {
            s.stat_marginal[i] = -evals[i].marginal_log_density;
            s.stat_logit[i] = -evals[i].logits[evals[i].predicted];
        }
        s.stat_kl[i] = kl_divergence(calib.mean_prob[evals[i].predicted],
                                     evals[i].posterior);
        s.stat_tv[i] = tv_distance(calib.mean_prob[evals[i].predicted],
                                   evals[i].posterior);
    }
    s.evaluated = true;
}

struct TpCounter {
    std::size_t successes = 0;
    std::size_t rejected_marginal = 0, rejected_logit = 0;
    std::size_t rejected_kl = 0, rejected_tv = 0;
    bool density = false;
};

TpCounter count_tp(const AttackSettingResult& s,
                   const DetectorCalibration& calib) {
    TpCounter tp;
    tp.density = calib.density_available;
    const std::size_t n = s.success.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!s.success[i]) continue;
        ++tp.successes;
        const std::size_t cls = s.predicted[i];
        if (tp.density) {
            if (s.stat_marginal[i] > calib.marginal.threshold) {
                ++tp.rejected_marginal;
            }
            if (s.stat_logit[i] > calib.logit[cls].threshold) {
                ++tp.rejected_logit;
            }
        }
        if (s.stat_kl[i] > calib.kl[cls].threshold) ++tp.rejected_kl;
        if (s.stat_tv[i] > calib.tv[cls].threshold) ++tp.rejected_tv;
    }
    return tp;
}

}  // namespace

MetricCell evaluate_setting(const std::string& model_id,
                            const std::string& attack,
                            const AttackSettingResult& setting,
                            const std::vector<std::size_t>& true_labels,
                            const DetectorCalibration& calib) {
    if (!setting.evaluated) {
        throw ArtifactError("evaluate_setting: batch has not been scored");
    }
    const std::size_t n = true_labels.size();
    MetricCell cell;
    cell.model_id = model_id;
    cell.attack = attack;
    cell.setting = setting.setting;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!setting.success[i]) ++correct;
    }
    cell.victim_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    cell.success_rate = 1.0 - cell.victim_accuracy;
    const TpCounter tp = count_tp(setting, calib);
    if (tp.successes > 0) {
        const double denom = static_cast<double>(tp.successes);
        if (tp.density) {
            cell.tp_marginal = tp.rejected_marginal / denom;
            cell.tp_logit = tp.rejected_logit / denom;
        }
        cell.tp_kl = tp.rejected_kl / denom;
        cell.tp_tv = tp.rejected_tv / denom;
    }
    return cell;
}

MinPerturbationResult min_perturbation(
    const std::vector<std::vector<bool>>& success_per_setting,
    const std::vector<double>& grid) {
    if (grid.empty()) throw ConfigError("min_perturbation: empty grid");
    if (success_per_setting.size() != grid.size()) {
        throw ShapeError("min_perturbation: flags do not align with the grid");
    }
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (grid[i] <= grid[i - 1]) {
            throw ConfigError("min_perturbation: grid must be increasing");
        }
    }
    const std::size_t n = success_per_setting.front().size();
    const double fallback = grid.back() + 0.1;
    MinPerturbationResult out;
    out.per_input.assign(n, fallback);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < grid.size(); ++s) {
            if (success_per_setting[s][i]) {
                out.per_input[i] = grid[s];
                break;
            }
        }
    }
    double acc = 0.0;
    for (double v : out.per_input) acc += v;
    out.mean = n > 0 ? acc / static_cast<double>(n) : 0.0;
    return out;
}

std::vector<TransferCell> transfer_eval(const AdversarialBatch& batch,
                                        const std::string& target_id,
                                        const Classifier& target,
                                        const DetectorCalibration& calib,
                                        std::size_t k, RngStream rng) {
    if (batch.clean_inputs.dim(1) != target.input_dim()) {
        throw ShapeError("transfer_eval: batch dim " +
                         std::to_string(batch.clean_inputs.dim(1)) +
                         " vs target input dim " +
                         std::to_string(target.input_dim()));
    }
    std::vector<TransferCell> cells;
    for (std::size_t si = 0; si < batch.settings.size(); ++si) {
        const AttackSettingResult& src = batch.settings[si];
        if (!src.evaluated) {
            throw ArtifactError("transfer_eval: source batch not scored");
        }
        TransferCell cell;
        cell.source_id = batch.source_model_id;
        cell.target_id = target_id;
        cell.attack = batch.attack_kind;
        cell.setting = src.setting;
        std::size_t transferred = 0;
        for (bool s : src.success) {
            if (s) ++transferred;
        }
        cell.transferred = transferred;
        if (transferred == 0) {
            cells.push_back(cell);
            continue;
        }
        // Score the whole crafted grid entry against the target with the
        // (target, attack, setting, source) stream, then restrict the
        // metrics to the source-successful subset; an A->A transfer
        // therefore reproduces the direct evaluation exactly.
        AttackSettingResult scored;
        scored.setting = src.setting;
        scored.crafted = src.crafted;
        RngStream stream = rng.child(eval_stream_tag(
            target_id, batch.attack_kind, si, batch.source_model_id));
        evaluate_into(scored, target, calib, batch.true_labels, k, stream);
        std::size_t correct = 0;
        TpCounter tp;
        tp.density = calib.density_available;
        for (std::size_t i = 0; i < batch.true_labels.size(); ++i) {
            if (!src.success[i]) continue;
            if (!scored.success[i]) {
                ++correct;
                continue;
            }
            ++tp.successes;
            const std::size_t cls = scored.predicted[i];
            if (tp.density) {
                if (scored.stat_marginal[i] > calib.marginal.threshold) {
                    ++tp.rejected_marginal;
                }
                if (scored.stat_logit[i] > calib.logit[cls].threshold) {
                    ++tp.rejected_logit;
                }
            }
            if (scored.stat_kl[i] > calib.kl[cls].threshold) ++tp.rejected_kl;
            if (scored.stat_tv[i] > calib.tv[cls].threshold) ++tp.rejected_tv;
        }
        cell.victim_accuracy = static_cast<double>(correct) /
                               static_cast<double>(transferred);
        if (tp.successes > 0) {
            const double denom = static_cast<double>(tp.successes);
            if (tp.density) {
                cell.tp_marginal = tp.rejected_marginal / denom;
                cell.tp_logit = tp.rejected_logit / denom;
            }
            cell.tp_kl = tp.rejected_kl / denom;
            cell.tp_tv = tp.rejected_tv / denom;
        }
        cells.push_back(cell);
    }
    return cells;
}

void MetricsReport::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ArtifactError("cannot open for write: " + path);
    f << "model,attack,setting,metric,value\n";
    for (const auto& [id, acc] : clean_accuracy) {
        f << id << ",clean,all,accuracy," << fmt(acc) << '\n';
    }
    for (const MetricCell& c : cells) {
        const std::string prefix =
            c.model_id + ',' + c.attack + ',' + fmt(c.setting) + ',';
        f << prefix << "victim_accuracy," << fmt(c.victim_accuracy) << '\n';
        f << prefix << "success_rate," << fmt(c.success_rate) << '\n';
        f << prefix << "tp_marginal," << fmt_opt(c.tp_marginal) << '\n';
        f << prefix << "tp_logit," << fmt_opt(c.tp_logit) << '\n';
        f << prefix << "tp_kl," << fmt_opt(c.tp_kl) << '\n';
        f << prefix << "tp_tv," << fmt_opt(c.tp_tv) << '\n';
    }
    for (const MinPert& m : min_perturbations) {
        f << m.model_id << ',' << m.attack << ",all,mean_min_perturbation,"
          << fmt(m.mean) << '\n';
    }
}

void MetricsReport::write_transfer_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ArtifactError("cannot open for write: " + path);
    f << "source,target,attack,setting,metric,value\n";
    for (const TransferCell& c : transfers) {
        const std::string prefix = c.source_id + ',' + c.target_id + ',' +
                                   c.attack + ',' + fmt(c.setting) + ',';
        f << prefix << "transferred," << c.transferred << '\n';
        f << prefix << "victim_accuracy," << fmt_opt(c.victim_accuracy)
          << '\n';
        f << prefix << "tp_marginal," << fmt_opt(c.tp_marginal) << '\n';
        f << prefix << "tp_logit," << fmt_opt(c.tp_logit) << '\n';
        f << prefix << "tp_kl," << fmt_opt(c.tp_kl) << '\n';
        f << prefix << "tp_tv," << fmt_opt(c.tp_tv) << '\n';
    }
}

void run_train(const ExperimentConfig& config, const std::string& out_dir) {
    ensure_dir(out_dir);
    const Dataset data = load_train_dataset(config);
    for (const ModelEntry& entry : config.models) {
        RngStream init_rng =
            RngStream(config.seed).child(hash64("init:" + entry.id));
        std::shared_ptr<Classifier> model = build_model(entry, init_rng);
        RngStream train_rng =
            RngStream(config.seed).child(hash64("train:" + entry.id));
        TrainResult trace;
        if (entry.type == "deep_bayes") {
            trace = train(*std::static_pointer_cast<DeepBayesModel>(model),
                          data, config.train, train_rng);
        } else if (entry.type == "bnn" || entry.type == "mlp") {
            trace = train_mlp(*std::static_pointer_cast<MlpClassifier>(model),
                              data, config.train, train_rng);
        }
        ModelArtifact artifact{model, std::nullopt, config.seed, entry.id};
        save_checkpoint(artifact, model_path(out_dir, entry.id));
        if (!trace.loss_trace.empty()) {
            write_trace(trace.loss_trace,
                        out_dir + "/trace_" + entry.id + ".csv");
        }
        logging::info("trained " + entry.id);
    }
}

void run_calibrate(const ExperimentConfig& config,
                   const std::string& out_dir) {
    const Dataset data = load_train_dataset(config);
    for (const ModelEntry& entry : config.models) {
        ModelArtifact artifact = load_checkpoint(model_path(out_dir, entry.id));
        RngStream rng =
            RngStream(config.seed).child(hash64("calib:" + entry.id));
        artifact.calibration =
            calibrate(*artifact.model, data, config.calib_mode,
                      config.calib_parameter, config.k_samples, rng);
        save_checkpoint(artifact, model_path(out_dir, entry.id));
        logging::info("calibrated " + entry.id);
    }
}

namespace {

struct AttackCell {
    const ModelEntry* entry;
    const AttackGrid* grid;
};

std::vector<AttackCell> attack_cells(const ExperimentConfig& config) {
    std::vector<AttackCell> cells;
    for (const AttackGrid& grid : config.attacks) {
        for (const ModelEntry& entry : config.models) {
            if (!grid.model_ids.empty() &&
                std::find(grid.model_ids.begin(), grid.model_ids.end(),
                          entry.id) == grid.model_ids.end()) {
                continue;
            }
            if (grid.base.kind == "wbs" && entry.type != "deep_bayes") {
                continue;  // sampling-aware attack needs an LVM victim
            }
            cells.push_back(AttackCell{&entry, &grid});
        }
    }
    return cells;
}

void run_attack_cell(const ExperimentConfig& config,
                     const std::string& out_dir, const AttackCell& cell,
                     const Dataset& attack_data) {
    const std::string& id = cell.entry->id;
    const AttackGrid& grid = *cell.grid;
    ModelArtifact artifact = load_checkpoint(model_path(out_dir, id));
    AdversarialBatch batch;
    batch.source_model_id = id;
    batch.attack_kind = grid.base.kind;
    batch.config = grid.base;
    batch.seed = config.seed;
    batch.clean_inputs = attack_data.inputs.clone();
    batch.true_labels = attack_data.labels;
    for (std::size_t si = 0; si < grid.settings.size(); ++si) {
        AttackConfig cfg = grid.base;
        cfg.k_samples = config.k_samples;
        const double setting = grid.settings[si];
        if (cfg.kind == "cw") {
            cfg.cw_c = setting;
        } else if (cfg.kind == "wbs") {
            cfg.lambda_detect = setting;
        } else {
            cfg.epsilon = setting;
        }
        RngStream rng = RngStream(config.seed)
                            .child(hash64("attack:" + id + ":" + cfg.kind +
                                          ":" + std::to_string(si)));
        AttackSettingResult result;
        result.setting = setting;
        if (cfg.kind == "fgsm") {
            result.crafted = fgsm(*artifact.model, batch.clean_inputs,
                                  batch.true_labels, cfg, rng);
        } else if (cfg.kind == "pgd") {
            result.crafted = pgd(*artifact.model, batch.clean_inputs,
                                 batch.true_labels, cfg, rng);
        } else if (cfg.kind == "mim") {
            result.crafted = mim(*artifact.model, batch.clean_inputs,
                                 batch.true_labels, cfg, rng);
        } else if (cfg.kind == "cw") {
            result.crafted = cw_l2(*artifact.model, batch.clean_inputs,
                                   batch.true_labels, cfg, rng)
                                 .crafted;
        } else if (cfg.kind == "spsa") {
            result.crafted = spsa(*artifact.model, batch.clean_inputs,
                                  batch.true_labels, cfg, rng);
        } else if (cfg.kind == "wbs") {
            if (!artifact.calibration) {
                throw ArtifactError("wbs attack on " + id +
                                    " requires a calibrated checkpoint");
            }
            result.crafted = wbs_detection_aware(
                *std::static_pointer_cast<DeepBayesModel>(artifact.model),
                *artifact.calibration, batch.clean_inputs, batch.true_labels,
                cfg, rng);
        } else {
            throw ConfigError("unknown attack kind " + cfg.kind);
        }
        batch.settings.push_back(std::move(result));
    }
    save_batch(batch, batch_path(out_dir, id, grid.base.kind));
    logging::info("attacked " + id + " with " + grid.base.kind);
}

}  // namespace

void run_attack(const ExperimentConfig& config, const std::string& out_dir,
                std::size_t jobs) {
    ensure_dir(out_dir);
    const Dataset attack_data = load_attack_dataset(config);
    const std::vector<AttackCell> cells = attack_cells(config);
    if (jobs <= 1 || cells.size() <= 1) {
        for (const AttackCell& cell : cells) {
            run_attack_cell(config, out_dir, cell, attack_data);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                run_attack_cell(config, out_dir, cells[i], attack_data);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(jobs, cells.size()); ++t) {
        pool.emplace_back(worker);
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

void run_detect(const ExperimentConfig& config, const std::string& out_dir) {
    for (const AttackCell& cell : attack_cells(config)) {
        const std::string& id = cell.entry->id;
        const std::string& kind = cell.grid->base.kind;
        AdversarialBatch batch = load_batch(batch_path(out_dir, id, kind));
        ModelArtifact artifact = load_checkpoint(model_path(out_dir, id));
        if (!artifact.calibration) {
            throw ArtifactError("detect: " + id + " has no calibration");
        }
        std::ofstream csv(out_dir + "/detect_" + id + "_" + kind + ".csv");
        csv << "setting,index,true_label,predicted,success,phi_marginal,"
               "phi_logit,phi_kl,phi_tv,accepted_marginal,accepted_logit,"
               "accepted_kl,accepted_tv\n";
        for (std::size_t si = 0; si < batch.settings.size(); ++si) {
            AttackSettingResult& s = batch.settings[si];
            RngStream stream =
                RngStream(config.seed)
                    .child(eval_stream_tag(id, kind, si, id));
            evaluate_into(s, *artifact.model, *artifact.calibration,
                          batch.true_labels, config.k_samples, stream);
            const DetectorCalibration& calib = *artifact.calibration;
            for (std::size_t i = 0; i < batch.true_labels.size(); ++i) {
                const std::size_t cls = s.predicted[i];
                csv << fmt(s.setting) << ',' << i << ','
                    << batch.true_labels[i] << ',' << s.predicted[i] << ','
                    << (s.success[i] ? 1 : 0) << ',';
                if (calib.density_available) {
                    csv << fmt(s.stat_marginal[i]) << ','
                        << fmt(s.stat_logit[i]) << ',';
                } else {
                    csv << "N/A,N/A,";
                }
                csv << fmt(s.stat_kl[i]) << ',' << fmt(s.stat_tv[i]) << ',';
                if (calib.density_available) {
                    csv << (s.stat_marginal[i] <= calib.marginal.threshold
                                ? 1
                                : 0)
                        << ','
                        << (s.stat_logit[i] <= calib.logit[cls].threshold ? 1
                                                                          : 0)
                        << ',';
                } else {
                    csv << "N/A,N/A,";
                }
                csv << (s.stat_kl[i] <= calib.kl[cls].threshold ? 1 : 0) << ','
                    << (s.stat_tv[i] <= calib.tv[cls].threshold ? 1 : 0)
                    << '\n';
            }
        }
        save_batch(batch, batch_path(out_dir, id, kind));
        logging::info("scored batch " + id + "/" + kind);
    }
}

MetricsReport run_evaluate(const ExperimentConfig& config,
                           const std::string& out_dir) {
    MetricsReport report;
    const Dataset attack_data = load_attack_dataset(config);
    for (const ModelEntry& entry : config.models) {
        ModelArtifact artifact = load_checkpoint(model_path(out_dir, entry.id));
        RngStream rng = RngStream(config.seed)
                            .child(hash64("eval-clean:" + entry.id));
        const Prediction pred =
            predict(*artifact.model, attack_data.inputs, config.k_samples, rng);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < attack_data.size(); ++i) {
            if (pred.labels[i] == attack_data.labels[i]) ++correct;
        }
        report.clean_accuracy.emplace_back(
            entry.id, static_cast<double>(correct) /
                          static_cast<double>(attack_data.size()));
    }
    for (const AttackCell& cell : attack_cells(config)) {
        const std::string& id = cell.entry->id;
        const std::string& kind = cell.grid->base.kind;
        AdversarialBatch batch = load_batch(batch_path(out_dir, id, kind));
        ModelArtifact artifact = load_checkpoint(model_path(out_dir, id));
        if (!artifact.calibration) {
            throw ArtifactError("evaluate: " + id + " has no calibration");
        }
        std::vector<std::vector<bool>> success_matrix;
        std::vector<double> grid;
        for (const AttackSettingResult& s : batch.settings) {
            report.cells.push_back(evaluate_setting(
                id, kind, s, batch.true_labels, *artifact.calibration));
            success_matrix.push_back(s.success);
            grid.push_back(s.setting);
        }
        // The epsilon-grid attacks define a minimum perturbation; CW's c
        // grid and the WB+S lambda grid do not.
        if (kind == "fgsm" || kind == "pgd" || kind == "mim" ||
            kind == "spsa") {
            report.min_perturbations.push_back(MetricsReport::MinPert{
                id, kind, min_perturbation(success_matrix, grid).mean});
        }
    }
    report.write_csv(out_dir + "/report.csv");
    return report;
}

void run_transfer(const ExperimentConfig& config, const std::string& out_dir) {
    if (config.transfers.empty()) return;
    MetricsReport report;
    for (const TransferSpec& spec : config.transfers) {
        AdversarialBatch batch =
            load_batch(batch_path(out_dir, spec.source, spec.attack));
        ModelArtifact target = load_checkpoint(model_path(out_dir, spec.target));
        if (!target.calibration) {
            throw ArtifactError("transfer: " + spec.target +
                                " has no calibration");
        }
        const std::vector<TransferCell> cells =
            transfer_eval(batch, spec.target, *target.model,
                          *target.calibration, config.k_samples,
                          RngStream(config.seed));
        report.transfers.insert(report.transfers.end(), cells.begin(),
                                cells.end());
    }
    report.write_transfer_csv(out_dir + "/transfer.csv");
}

void run_report(const ExperimentConfig& config, const std::string& out_dir) {
    run_evaluate(config, out_dir);
    run_transfer(config, out_dir);
}

void run_full_pipeline(const ExperimentConfig& config,
                       const std::string& out_dir, std::size_t jobs) {
    run_train(config, out_dir);
    run_calibrate(config, out_dir);
    run_attack(config, out_dir, jobs);
    run_detect(config, out_dir);
    run_evaluate(config, out_dir);
    run_transfer(config, out_dir);
}

void run_two_rings_demo(const TwoRingsSpec& spec, std::uint64_t seed,
                        const std::string& out_dir) {
    ensure_dir(out_dir);
    RngStream data_rng = RngStream(seed).child(hash64("demo-data"));
    const Dataset data = sample_two_rings(spec, 1000, data_rng);
    export_csv(data, out_dir + "/train.csv");

    auto model = std::make_shared<TwoRingsClassifier>(spec);
    RngStream calib_rng = RngStream(seed).child(hash64("demo-calib"));
    const DetectorCalibration calib =
        calibrate(*model, data, CalibrationMode::TargetFpr, 0.10, 1,
                  calib_rng);
    ModelArtifact artifact{model, calib, seed, "two_rings"};
    save_checkpoint(artifact, model_path(out_dir, "two_rings"));

    // Dense decision/rejection grid over the plane.
    const double lo = -3.5, hi = 3.5, step = 0.05;
    std::vector<double> coords;
    for (double v = lo; v <= hi + 1e-9; v += step) coords.push_back(v);
    const std::size_t g = coords.size();
    Tensor grid({g * g, 2});
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = 0; j < g; ++j) {
            grid.data()[2 * (i * g + j)] = coords[j];       // x1
            grid.data()[2 * (i * g + j) + 1] = coords[i];   // x2
        }
    }
    RngStream eval_rng = RngStream(seed).child(hash64("demo-grid"));
    const std::vector<InputEvaluation> evals =
        evaluate_batch(*model, grid, 1, eval_rng);

    std::ofstream csv(out_dir + "/grid.csv");
    if (!csv) throw ArtifactError("cannot open for write: " + out_dir);
    csv << "x1,x2,predicted,accepted_marginal,accepted_logit,accepted_kl,"
           "accepted_tv\n";
    for (std::size_t i = 0; i < evals.size(); ++i) {
        const InputEvaluation& e = evals[i];
        const DetectionDecision dm = detect_marginal(calib, e);
        const DetectionDecision dl = detect_logit(calib, e);
        const DetectionDecision dk =
            detect_divergence(calib, e, DivergenceKind::KL);
        const DetectionDecision dt =
            detect_divergence(calib, e, DivergenceKind::TV);
        csv << fmt(grid.at(i, 0)) << ',' << fmt(grid.at(i, 1)) << ','
            << e.predicted << ',' << (dm.accepted ? 1 : 0) << ','
            << (dl.accepted ? 1 : 0) << ',' << (dk.accepted ? 1 : 0) << ','
            << (dt.accepted ? 1 : 0) << '\n';
    }
}

}  // namespace deepbayes
