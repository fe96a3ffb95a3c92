#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "deepbayes/data.hpp"
#include <json.hpp>

#include "deepbayes/errors.hpp"

using namespace deepbayes;

namespace {

std::string temp_dir() {
    const std::string dir =
        (std::filesystem::temp_directory_path() / "deepbayes_data_tests")
            .string();
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("two-rings sampler counts and degenerate noise") {
    TwoRingsSpec spec;
    spec.noise_std = 0.0;
    RngStream rng(1);
    const Dataset data = sample_two_rings(spec, 1000, rng);
    CHECK(data.size() == 2000);
    const auto counts = data.class_counts();
    CHECK(counts[0] == 1000);
    CHECK(counts[1] == 1000);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double cx = data.labels[i] == 0 ? spec.center0[0] : spec.center1[0];
        const double cy = data.labels[i] == 0 ? spec.center0[1] : spec.center1[1];
        const double r = data.labels[i] == 0 ? spec.radius0 : spec.radius1;
        const double d = std::hypot(data.inputs.at(i, 0) - cx,
                                    data.inputs.at(i, 1) - cy);
        CHECK(d == doctest::Approx(r).epsilon(1e-12));
    }
}

TEST_CASE("two-rings sampler is seed-deterministic") {
    TwoRingsSpec spec;
    RngStream r1(7), r2(7);
    const Dataset a = sample_two_rings(spec, 50, r1);
    const Dataset b = sample_two_rings(spec, 50, r2);
    for (std::size_t i = 0; i < a.inputs.size(); ++i) {
        CHECK(a.inputs.at(i) == b.inputs.at(i));
    }
}

TEST_CASE("two-rings mean distance-to-center matches the radius") {
    TwoRingsSpec spec;
    spec.noise_std = 0.002;
    RngStream rng(2);
    const Dataset data = sample_two_rings(spec, 50000, rng);
    double acc0 = 0.0;
    for (std::size_t i = 0; i < 50000; ++i) {
        acc0 += std::hypot(data.inputs.at(i, 0), data.inputs.at(i, 1));
    }
    const double mean0 = acc0 / 50000.0;
    const double se = spec.noise_std / std::sqrt(50000.0);
    CHECK(std::abs(mean0 - spec.radius0) < 3.0 * se);
}

TEST_CASE("two-rings rejects nonpositive radii") {
    TwoRingsSpec spec;
    spec.radius1 = 0.0;
    RngStream rng(3);
    CHECK_THROWS_AS((void)sample_two_rings(spec, 5, rng), ConfigError);
}

TEST_CASE("IDX fixture parses to exact floats") {
    const std::string dir = temp_dir();
    const std::string img = dir + "/fixture-images.idx";
    const std::string lab = dir + "/fixture-labels.idx";
    {
        std::ofstream f(img, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2,
                                        0, 0, 0, 3, 0, 0, 0, 3};
        f.write(reinterpret_cast<const char*>(header), sizeof(header));
        for (int i = 0; i < 18; ++i) {
            const unsigned char b = static_cast<unsigned char>(i * 10);
            f.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
    {
        std::ofstream f(lab, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 1, 0, 0, 0, 2};
        f.write(reinterpret_cast<const char*>(header), sizeof(header));
        const unsigned char labels[] = {3, 7};
        f.write(reinterpret_cast<const char*>(labels), 2);
    }
    const Dataset data = load_idx(img, lab);
    CHECK(data.size() == 2);
    CHECK(data.input_dim() == 9);
    CHECK(data.class_count == 8);
    CHECK(data.inputs.at(0, 0) == 0.0);
    CHECK(data.inputs.at(0, 1) == 10.0 / 255.0);
    CHECK(data.inputs.at(1, 8) == 170.0 / 255.0);
    CHECK(data.labels[0] == 3);
    CHECK(data.labels[1] == 7);
}

TEST_CASE("IDX wrong magic names expected and actual") {
    const std::string dir = temp_dir();
    const std::string img = dir + "/bad-images.idx";
    {
        std::ofstream f(img, std::ios::binary);
        const unsigned char header[] = {0, 0, 9, 9, 0, 0, 0, 0,
                                        0, 0, 0, 1, 0, 0, 0, 1};
        f.write(reinterpret_cast<const char*>(header), sizeof(header));
    }
    try {
        (void)load_idx(img, img);
        FAIL("expected ArtifactError");
    } catch (const ArtifactError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("0x00000803") != std::string::npos);
        CHECK(msg.find("0x00000909") != std::string::npos);
    }
}

TEST_CASE("IDX detects truncation and count mismatch") {
    const std::string dir = temp_dir();
    const std::string img = dir + "/trunc-images.idx";
    const std::string lab = dir + "/trunc-labels.idx";
    {
        std::ofstream f(img, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2,
                                        0, 0, 0, 2, 0, 0, 0, 2};
        f.write(reinterpret_cast<const char*>(header), sizeof(header));
        const unsigned char byte = 1;  // far too few payload bytes
        f.write(reinterpret_cast<const char*>(&byte), 1);
    }
    {
        std::ofstream f(lab, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 1, 0, 0, 0, 2};
        f.write(reinterpret_cast<const char*>(header), sizeof(header));
        const unsigned char labels[] = {0, 1};
        f.write(reinterpret_cast<const char*>(labels), 2);
    }
    CHECK_THROWS_AS((void)load_idx(img, lab), ArtifactError);

    const std::string lab3 = dir + "/mismatch-labels.idx";
    {
        std::ofstream f(lab3, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 1, 0, 0, 0, 3};
        f.write(reinterpret_cast<const char*>(header), sizeof(header));
        const unsigned char labels[] = {0, 1, 0};
        f.write(reinterpret_cast<const char*>(labels), 3);
    }
    try {
        (void)load_idx(img, lab3);
        FAIL("expected ArtifactError");
    } catch (const ArtifactError& e) {
        CHECK(std::string(e.what()).find("mismatch") != std::string::npos);
    }
}

TEST_CASE("IDX write-then-read round trip") {
    const std::string dir = temp_dir();
    const std::size_t n = 16;
    // Values already quantized to the byte grid, so one trip is lossless.
    Tensor wide({n, 16});
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = i % 2;
        for (std::size_t d = 0; d < 16; ++d) {
            wide.data()[i * 16 + d] =
                static_cast<double>((i * 16 + d) % 256) / 255.0;
        }
    }
    Dataset wide_data{wide, labels, 2, "fixture"};
    save_idx(wide_data, dir + "/rt-images.idx", dir + "/rt-labels.idx", 4, 4);
    const Dataset back =
        load_idx(dir + "/rt-images.idx", dir + "/rt-labels.idx");
    CHECK(back.size() == wide_data.size());
    for (std::size_t i = 0; i < wide_data.inputs.size(); ++i) {
        CHECK(back.inputs.at(i) == wide_data.inputs.at(i));
    }
    CHECK(back.labels == wide_data.labels);
}

TEST_CASE("subset_binary relabels and preserves order and counts") {
    Tensor inputs({6, 1}, {0, 1, 2, 3, 4, 5});
    Dataset data{inputs, {0, 3, 1, 3, 0, 2}, 4, "fixture"};
    const Dataset sub = subset_binary(data, 3, 0);
    CHECK(sub.size() == 4);
    // rows kept in original order: labels 0,3,3,0 -> relabeled 1,0,0,1
    CHECK(sub.inputs.at(0, 0) == 0.0);
    CHECK(sub.inputs.at(1, 0) == 1.0);
    CHECK(sub.inputs.at(2, 0) == 3.0);
    CHECK(sub.inputs.at(3, 0) == 4.0);
    CHECK(sub.labels == std::vector<std::size_t>{1, 0, 0, 1});

    // brute-force oracle over a random 10-class fixture
    RngStream rng(5);
    const std::size_t n = 200;
    Tensor xs({n, 2}, rng.uniforms(2 * n, 0.0, 1.0));
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = rng.below(10);
    Dataset big{xs, labels, 10, "fixture"};
    const Dataset got = subset_binary(big, 2, 7);
    std::size_t expect = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == 2 || labels[i] == 7) ++expect;
    }
    CHECK(got.size() == expect);
    const auto counts = got.class_counts();
    std::size_t c2 = 0, c7 = 0;
    for (std::size_t y : labels) {
        c2 += y == 2;
        c7 += y == 7;
    }
    CHECK(counts[0] == c2);
    CHECK(counts[1] == c7);

    CHECK_THROWS_AS((void)subset_binary(big, 11, 12), ArtifactError);
}

TEST_CASE("feature vectors: fixture, round trip, missing labels") {
    const std::string dir = temp_dir();
    FeatureDataset fd;
    fd.source = "unit-fixture";
    fd.data.inputs = Tensor({3, 4}, {0.5, -1.25, 3.0, 0.0,   //
                                     1.5, 2.5, -0.125, 7.0,  //
                                     0.25, 0.75, -3.5, 2.0});
    fd.data.labels = {0, 2, 1};
    fd.data.class_count = 3;
    save_feature_vectors(fd, dir + "/features");
    const FeatureDataset back = load_feature_vectors(dir + "/features");
    CHECK(back.source == "unit-fixture");
    CHECK(back.data.labels == fd.data.labels);
    for (std::size_t i = 0; i < fd.data.inputs.size(); ++i) {
        CHECK(back.data.inputs.at(i) == fd.data.inputs.at(i));  // bit exact
    }

    // Strip the labels section and expect a structured failure.
    nlohmann::json j;
    {
        std::ifstream f(dir + "/features.json");
        f >> j;
    }
    j.erase("labels");
    {
        std::ofstream f(dir + "/features-broken.json");
        f << j.dump(2);
    }
    std::filesystem::copy_file(
        dir + "/features.bin", dir + "/features-broken.bin",
        std::filesystem::copy_options::overwrite_existing);
    try {
        (void)load_feature_vectors(dir + "/features-broken");
        FAIL("expected ArtifactError");
    } catch (const ArtifactError& e) {
        CHECK(std::string(e.what()).find("labels") != std::string::npos);
    }
}

TEST_CASE("csv export writes a parseable file") {
    const std::string dir = temp_dir();
    TwoRingsSpec spec;
    RngStream rng(6);
    const Dataset data = sample_two_rings(spec, 3, rng);
    export_csv(data, dir + "/export.csv");
    std::ifstream f(dir + "/export.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "x0,x1,label");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 6);
}
