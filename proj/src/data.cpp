#include "deepbayes/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

#include "deepbayes/errors.hpp"
#include "io_util.hpp"

namespace deepbayes {

void Dataset::validate() const {
    if (labels.empty()) throw ArtifactError("Dataset: empty");
    if (inputs.rank() != 2 || inputs.dim(0) != labels.size()) {
        throw ShapeError("Dataset: inputs " + inputs.shape_str() +
                         " do not match " + std::to_string(labels.size()) +
                         " labels");
    }
    if (!inputs.all_finite()) throw NumericError("Dataset: non-finite input");
    for (std::size_t y : labels) {
        if (y >= class_count) {
            throw ArtifactError("Dataset: label " + std::to_string(y) +
                                " out of range [0," +
                                std::to_string(class_count) + ")");
        }
    }
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t y : labels) ++counts[y];
    return counts;
}

void TwoRingsSpec::validate() const {
    if (radius0 <= 0.0 || radius1 <= 0.0) {
        throw ConfigError("two rings: radii must be strictly positive");
    }
    if (noise_std < 0.0) {
        throw ConfigError("two rings: noise std must be nonnegative");
    }
}

Dataset sample_two_rings(const TwoRingsSpec& spec, std::size_t n_per_class,
                         RngStream& rng) {
    spec.validate();
    if (n_per_class < 1) {
        throw ConfigError("sample_two_rings: n_per_class must be >= 1");
    }
    const std::size_t n = 2 * n_per_class;
    Tensor inputs({n, 2});
    std::vector<std::size_t> labels(n);
    const std::array<std::array<double, 2>, 2> centers = {spec.center0,
                                                          spec.center1};
    const std::array<double, 2> radii = {spec.radius0, spec.radius1};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = i < n_per_class ? 0 : 1;
        const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double mx = centers[y][0] + radii[y] * std::cos(theta);
        const double my = centers[y][1] + radii[y] * std::sin(theta);
        inputs.data()[2 * i] = mx + spec.noise_std * rng.normal();
        inputs.data()[2 * i + 1] = my + spec.noise_std * rng.normal();
        labels[i] = y;
    }
    return Dataset{std::move(inputs), std::move(labels), 2, "two_rings"};
}

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::uint32_t read_be_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) {
        throw ArtifactError("truncated IDX header: " + path);
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>((v >> 24) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>(v & 0xFF)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& image_path,
                 const std::string& label_path) {
    std::ifstream imgf(image_path, std::ios::binary);
    if (!imgf) throw ArtifactError("cannot open: " + image_path);
    const std::uint32_t img_magic = read_be_u32(imgf, image_path);
    if (img_magic != kIdxImageMagic) {
        char buf[96];
        std::snprintf(buf, sizeof(buf),
                      "IDX image magic mismatch: expected 0x%08x, got 0x%08x",
                      kIdxImageMagic, img_magic);
        throw ArtifactError(std::string(buf) + " in " + image_path);
    }
    const std::uint32_t count = read_be_u32(imgf, image_path);
    const std::uint32_t rows = read_be_u32(imgf, image_path);
    const std::uint32_t cols = read_be_u32(imgf, image_path);

    std::ifstream labf(label_path, std::ios::binary);
    if (!labf) throw ArtifactError("cannot open: " + label_path);
    const std::uint32_t lab_magic = read_be_u32(labf, label_path);
    if (lab_magic != kIdxLabelMagic) {
        char buf[96];
        std::snprintf(buf, sizeof(buf),
                      "IDX label magic mismatch: expected 0x%08x, got 0x%08x",
                      kIdxLabelMagic, lab_magic);
        throw ArtifactError(std::string(buf) + " in " + label_path);
    }
    const std::uint32_t lab_count = read_be_u32(labf, label_path);
    if (lab_count != count) {
        throw ArtifactError("IDX count mismatch: " + std::to_string(count) +
                            " images vs " + std::to_string(lab_count) +
                            " labels");
    }

    const std::size_t dim = std::size_t{rows} * cols;
    Tensor inputs({count, dim});
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!imgf.read(reinterpret_cast<char*>(buf.data()),
                       static_cast<std::streamsize>(dim))) {
            throw ArtifactError("truncated IDX image payload: " + image_path);
        }
        for (std::size_t d = 0; d < dim; ++d) {
            inputs.data()[i * dim + d] = static_cast<double>(buf[d]) / 255.0;
        }
    }
    std::vector<std::size_t> labels(count);
    std::size_t max_label = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        unsigned char y;
        if (!labf.read(reinterpret_cast<char*>(&y), 1)) {
            throw ArtifactError("truncated IDX label payload: " + label_path);
        }
        labels[i] = y;
        max_label = std::max<std::size_t>(max_label, y);
    }
    Dataset out{std::move(inputs), std::move(labels), max_label + 1, "idx"};
    out.validate();
    return out;
}

void save_idx(const Dataset& data, const std::string& image_path,
              const std::string& label_path, std::size_t rows,
              std::size_t cols) {
    if (rows * cols != data.input_dim()) {
        throw ShapeError("save_idx: rows*cols != input dim");
    }
    std::ofstream imgf(image_path, std::ios::binary);
    if (!imgf) throw ArtifactError("cannot open for write: " + image_path);
    write_be_u32(imgf, kIdxImageMagic);
    write_be_u32(imgf, static_cast<std::uint32_t>(data.size()));
    write_be_u32(imgf, static_cast<std::uint32_t>(rows));
    write_be_u32(imgf, static_cast<std::uint32_t>(cols));
    for (std::size_t i = 0; i < data.inputs.size(); ++i) {
        const double v = std::clamp(data.inputs.at(i), 0.0, 1.0);
        const unsigned char byte =
            static_cast<unsigned char>(std::lround(v * 255.0));
        imgf.write(reinterpret_cast<const char*>(&byte), 1);
    }
    std::ofstream labf(label_path, std::ios::binary);
    if (!labf) throw ArtifactError("cannot open for write: " + label_path);
    write_be_u32(labf, kIdxLabelMagic);
    write_be_u32(labf, static_cast<std::uint32_t>(data.size()));
    for (std::size_t y : data.labels) {
        const unsigned char byte = static_cast<unsigned char>(y);
        labf.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

Dataset subset_binary(const Dataset& data, std::size_t class_a,
                      std::size_t class_b) {
    const std::size_t dim = data.input_dim();
    std::vector<double> rows;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t y = data.labels[i];
        if (y != class_a && y != class_b) continue;
        rows.insert(rows.end(), data.inputs.data() + i * dim,
                    data.inputs.data() + (i + 1) * dim);
        labels.push_back(y == class_a ? 0 : 1);
    }
    if (labels.empty()) {
        throw ArtifactError("subset_binary: no rows with classes " +
                            std::to_string(class_a) + "/" +
                            std::to_string(class_b));
    }
    Dataset out{Tensor({labels.size(), dim}, std::move(rows)),
                std::move(labels), 2,
                data.provenance + ":binary(" + std::to_string(class_a) + "," +
                    std::to_string(class_b) + ")"};
    return out;
}

FeatureDataset load_feature_vectors(const std::string& path_base) {
    const nlohmann::json j = io::load_json(path_base + ".json");
    if (!j.contains("labels")) {
        throw ArtifactError("feature dataset missing labels section: " +
                            path_base + ".json");
    }
    const std::size_t rows = j.at("rows").get<std::size_t>();
    const std::size_t dim = j.at("dim").get<std::size_t>();
    std::vector<std::size_t> labels =
        j.at("labels").get<std::vector<std::size_t>>();
    if (labels.size() != rows) {
        throw ArtifactError("feature dataset: " + std::to_string(rows) +
                            " rows vs " + std::to_string(labels.size()) +
                            " labels");
    }
    std::vector<double> values =
        io::read_f64_blob(path_base + ".bin", rows * dim);
    FeatureDataset fd;
    fd.data.inputs = Tensor({rows, dim}, std::move(values));
    fd.data.labels = std::move(labels);
    fd.data.class_count = j.at("class_count").get<std::size_t>();
    fd.data.provenance = "features:" + j.value("source", std::string("?"));
    fd.source = j.value("source", std::string("?"));
    fd.data.validate();
    return fd;
}

void save_feature_vectors(const FeatureDataset& fd,
                          const std::string& path_base) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "feature_dataset";
    j["source"] = fd.source;
    j["rows"] = fd.data.size();
    j["dim"] = fd.data.input_dim();
    j["class_count"] = fd.data.class_count;
    j["labels"] = fd.data.labels;
    io::save_json(j, path_base + ".json");
    io::write_f64_blob(path_base + ".bin", fd.data.inputs.values());
}

void export_csv(const Dataset& data, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ArtifactError("cannot open for write: " + path);
    const std::size_t dim = data.input_dim();
    for (std::size_t d = 0; d < dim; ++d) f << 'x' << d << ',';
    f << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t d = 0; d < dim; ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g",
                          data.inputs.at(i * dim + d));
            f << buf << ',';
        }
        f << data.labels[i] << '\n';
    }
}

}  // namespace deepbayes
