#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "deepbayes/attacks.hpp"
#include "deepbayes/checkpoint.hpp"
#include "deepbayes/harness.hpp"
#include "deepbayes/substitute.hpp"
#include "deepbayes/two_rings.hpp"

namespace py = pybind11;
using namespace deepbayes;

namespace {

Tensor tensor_from_array(const py::array_t<double>& arr) {
    const py::buffer_info info = arr.request();
    std::vector<std::size_t> shape(info.shape.begin(), info.shape.end());
    py::array_t<double, py::array::c_style | py::array::forcecast> c(arr);
    const double* data = c.data();
    return Tensor(shape, std::vector<double>(data, data + c.size()));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    py::array_t<double> out(t.shape());
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

std::vector<std::size_t> labels_from_array(const py::array_t<long>& arr) {
    py::array_t<long, py::array::c_style | py::array::forcecast> c(arr);
    std::vector<std::size_t> out(c.size());
    for (py::ssize_t i = 0; i < c.size(); ++i) {
        out[static_cast<std::size_t>(i)] =
            static_cast<std::size_t>(c.data()[i]);
    }
    return out;
}

TwoRingsSpec rings_from_kwargs(double r0, double r1, double noise_std) {
    TwoRingsSpec spec;
    spec.radius0 = r0;
    spec.radius1 = r1;
    spec.noise_std = noise_std;
    return spec;
}

// Opaque handle bundling a classifier with an optional calibration.
struct PyModel {
    std::shared_ptr<Classifier> model;
    std::optional<DetectorCalibration> calibration;
    std::uint64_t seed = 0;
    std::string id;
};

Dataset dataset_from_arrays(const py::array_t<double>& x,
                            const py::array_t<long>& y,
                            std::size_t class_count) {
    Dataset data;
    data.inputs = tensor_from_array(x);
    data.labels = labels_from_array(y);
    data.class_count = class_count;
    data.provenance = "python";
    data.validate();
    return data;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "deep generative classifier laboratory (C++ core)";

    py::class_<PyModel>(m, "Model")
        .def_property_readonly(
            "kind", [](const PyModel& pm) { return pm.model->kind(); })
        .def_property_readonly("input_dim",
                               [](const PyModel& pm) {
                                   return pm.model->input_dim();
                               })
        .def_property_readonly("class_count",
                               [](const PyModel& pm) {
                                   return pm.model->class_count();
                               })
        .def_property_readonly("has_density",
                               [](const PyModel& pm) {
                                   return pm.model->has_density();
                               })
        .def_property_readonly("calibrated",
                               [](const PyModel& pm) {
                                   return pm.calibration.has_value();
                               })
        .def("logits",
             [](const PyModel& pm, const py::array_t<double>& x, std::size_t k,
                std::uint64_t seed) {
                 RngStream rng(seed);
                 return array_from_tensor(
                     pm.model->class_logits(tensor_from_array(x), k, rng));
             },
             py::arg("x"), py::arg("k") = 10, py::arg("seed") = 0)
        .def("predict",
             [](const PyModel& pm, const py::array_t<double>& x, std::size_t k,
                std::uint64_t seed) {
                 RngStream rng(seed);
                 const Prediction pred =
                     predict(*pm.model, tensor_from_array(x), k, rng);
                 std::vector<long> labels(pred.labels.begin(),
                                          pred.labels.end());
                 return py::make_tuple(labels,
                                       array_from_tensor(pred.posterior));
             },
             py::arg("x"), py::arg("k") = 10, py::arg("seed") = 0)
        .def("marginal_log_density",
             [](const PyModel& pm, const py::array_t<double>& x, std::size_t k,
                std::uint64_t seed) {
                 RngStream rng(seed);
                 return array_from_tensor(marginal_log_density(
                     *pm.model, tensor_from_array(x), k, rng));
             },
             py::arg("x"), py::arg("k") = 10, py::arg("seed") = 0)
        .def("detect",
             [](const PyModel& pm, const py::array_t<double>& x,
                const std::string& kind, std::size_t k, std::uint64_t seed) {
                 if (!pm.calibration) {
                     throw std::runtime_error("model is not calibrated");
                 }
                 RngStream rng(seed);
                 const auto evals = evaluate_batch(
                     *pm.model, tensor_from_array(x), k, rng);
                 std::vector<bool> accepted;
                 accepted.reserve(evals.size());
                 for (const auto& e : evals) {
                     DetectionDecision d;
                     if (kind == "marginal") {
                         d = detect_marginal(*pm.calibration, e);
                     } else if (kind == "logit") {
                         d = detect_logit(*pm.calibration, e);
                     } else if (kind == "kl") {
                         d = detect_divergence(*pm.calibration, e,
                                               DivergenceKind::KL);
                     } else if (kind == "tv") {
                         d = detect_divergence(*pm.calibration, e,
                                               DivergenceKind::TV);
                     } else {
                         throw std::runtime_error("unknown detector " + kind);
                     }
                     accepted.push_back(d.accepted);
                 }
                 return accepted;
             },
             py::arg("x"), py::arg("kind"), py::arg("k") = 10,
             py::arg("seed") = 0)
        .def("save", [](const PyModel& pm, const std::string& path_base) {
            save_checkpoint(
                ModelArtifact{pm.model, pm.calibration, pm.seed, pm.id},
                path_base);
        });

    m.def("sample_two_rings",
          [](std::size_t n_per_class, std::uint64_t seed, double r0, double r1,
             double noise_std) {
              RngStream rng(seed);
              const Dataset data = sample_two_rings(
                  rings_from_kwargs(r0, r1, noise_std), n_per_class, rng);
              std::vector<long> labels(data.labels.begin(),
                                       data.labels.end());
              return py::make_tuple(array_from_tensor(data.inputs), labels);
          },
          py::arg("n_per_class"), py::arg("seed") = 1, py::arg("r0") = 1.0,
          py::arg("r1") = 2.0, py::arg("noise_std") = 0.1);

    m.def("two_rings_model",
          [](double r0, double r1, double noise_std) {
              PyModel pm;
              pm.model = std::make_shared<TwoRingsClassifier>(
                  rings_from_kwargs(r0, r1, noise_std));
              pm.id = "two_rings";
              return pm;
          },
          py::arg("r0") = 1.0, py::arg("r1") = 2.0, py::arg("noise_std") = 0.1);

    m.def("train_model",
          [](const std::string& factorization, const py::array_t<double>& x,
             const py::array_t<long>& y, std::size_t class_count,
             std::size_t latent_dim, const std::vector<std::size_t>& hidden,
             std::size_t epochs, std::size_t batch_size, double learning_rate,
             std::size_t k, std::uint64_t seed) {
              const Dataset data = dataset_from_arrays(x, y, class_count);
              ModelConfig c;
              c.factorization = factorization_from_string(factorization);
              c.input_dim = data.input_dim();
              c.class_count = class_count;
              c.latent_dim = latent_dim;
              c.hidden = hidden;
              c.k_samples = k;
              RngStream init = RngStream(seed).child(hash64("init"));
              auto model = std::make_shared<DeepBayesModel>(c, init);
              TrainConfig tc;
              tc.epochs = epochs;
              tc.batch_size = batch_size;
              tc.learning_rate = learning_rate;
              RngStream train_rng = RngStream(seed).child(hash64("train"));
              const TrainResult res = train(*model, data, tc, train_rng);
              PyModel pm;
              pm.model = model;
              pm.seed = seed;
              pm.id = factorization;
              return py::make_tuple(pm, res.loss_trace);
          },
          py::arg("factorization"), py::arg("x"), py::arg("y"),
          py::arg("class_count") = 2, py::arg("latent_dim") = 2,
          py::arg("hidden") = std::vector<std::size_t>{32, 32},
          py::arg("epochs") = 50, py::arg("batch_size") = 0,
          py::arg("learning_rate") = 1e-3, py::arg("k") = 10,
          py::arg("seed") = 1);

    m.def("calibrate",
          [](PyModel& pm, const py::array_t<double>& x,
             const py::array_t<long>& y, std::size_t class_count,
             const std::string& mode, double parameter, std::size_t k,
             std::uint64_t seed) {
              const Dataset data = dataset_from_arrays(x, y, class_count);
              RngStream rng(seed);
              pm.calibration = calibrate(
                  *pm.model, data,
                  mode == "alpha" ? CalibrationMode::Alpha
                                  : CalibrationMode::TargetFpr,
                  parameter, k, rng);
          },
          py::arg("model"), py::arg("x"), py::arg("y"),
          py::arg("class_count") = 2, py::arg("mode") = "target_fpr",
          py::arg("parameter") = 0.05, py::arg("k") = 10, py::arg("seed") = 0);

    m.def("attack",
          [](const PyModel& pm, const std::string& kind,
             const py::array_t<double>& x, const py::array_t<long>& y,
             double epsilon, double setting, std::size_t iterations,
             double step_size, std::size_t k, bool use_box, double box_lo,
             double box_hi, std::uint64_t seed) {
              AttackConfig cfg;
              cfg.kind = kind;
              cfg.epsilon = epsilon;
              cfg.iterations = iterations;
              cfg.step_size = step_size;
              cfg.k_samples = k;
              cfg.use_box = use_box;
              cfg.box_lo = box_lo;
              cfg.box_hi = box_hi;
              const Tensor clean = tensor_from_array(x);
              const std::vector<std::size_t> labels = labels_from_array(y);
              RngStream rng(seed);
              Tensor crafted;
              if (kind == "fgsm") {
                  crafted = fgsm(*pm.model, clean, labels, cfg, rng);
              } else if (kind == "pgd") {
                  crafted = pgd(*pm.model, clean, labels, cfg, rng);
              } else if (kind == "mim") {
                  crafted = mim(*pm.model, clean, labels, cfg, rng);
              } else if (kind == "cw") {
                  cfg.cw_c = setting;
                  crafted = cw_l2(*pm.model, clean, labels, cfg, rng).crafted;
              } else if (kind == "spsa") {
                  crafted = spsa(*pm.model, clean, labels, cfg, rng);
              } else if (kind == "wbs") {
                  cfg.lambda_detect = setting;
                  if (!pm.calibration) {
                      throw std::runtime_error(
                          "wbs needs a calibrated model");
                  }
                  auto* lvm = dynamic_cast<DeepBayesModel*>(pm.model.get());
                  if (lvm == nullptr) {
                      throw std::runtime_error(
                          "wbs needs a latent-variable model");
                  }
                  crafted = wbs_detection_aware(*lvm, *pm.calibration, clean,
                                                labels, cfg, rng);
              } else {
                  throw std::runtime_error("unknown attack kind " + kind);
              }
              return array_from_tensor(crafted);
          },
          py::arg("model"), py::arg("kind"), py::arg("x"), py::arg("y"),
          py::arg("epsilon") = 0.3, py::arg("setting") = 0.0,
          py::arg("iterations") = 40, py::arg("step_size") = 0.01,
          py::arg("k") = 10, py::arg("use_box") = false,
          py::arg("box_lo") = 0.0, py::arg("box_hi") = 1.0,
          py::arg("seed") = 0);

    m.def("load_model", [](const std::string& path_base) {
        const ModelArtifact artifact = load_checkpoint(path_base);
        PyModel pm;
        pm.model = artifact.model;
        pm.calibration = artifact.calibration;
        pm.seed = artifact.seed;
        pm.id = artifact.id;
        return pm;
    });

    m.def("run_pipeline",
          [](const std::string& config_json, const std::string& out_dir,
             std::size_t jobs) {
              const ExperimentConfig config = ExperimentConfig::from_json(
                  nlohmann::json::parse(config_json));
              run_full_pipeline(config, out_dir, jobs);
          },
          py::arg("config_json"), py::arg("out_dir"), py::arg("jobs") = 1);

    m.def("run_two_rings_demo",
          [](const std::string& out_dir, std::uint64_t seed) {
              run_two_rings_demo(TwoRingsSpec{}, seed, out_dir);
          },
          py::arg("out_dir"), py::arg("seed") = 1);

    m.attr("__version__") = "0.1.0";
}
