#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepbayes/errors.hpp"

namespace deepbayes::io {

// Little-endian f64 blob files back every binary artifact (checkpoints,
// batches, feature datasets).
inline void write_f64_blob(const std::string& path,
                           const std::vector<double>& values) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArtifactError("cannot open for write: " + path);
    for (double v : values) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) {
            bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
        }
        f.write(reinterpret_cast<const char*>(bytes), 8);
    }
    if (!f) throw ArtifactError("write failed: " + path);
}

inline std::vector<double> read_f64_blob(const std::string& path,
                                         std::size_t expected_count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArtifactError("cannot open: " + path);
    std::vector<double> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        unsigned char bytes[8];
        if (!f.read(reinterpret_cast<char*>(bytes), 8)) {
            throw ArtifactError("truncated blob: " + path + " (expected " +
                                std::to_string(expected_count) + " doubles)");
        }
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        }
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        out[i] = v;
    }
    return out;
}

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ArtifactError("cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void save_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ArtifactError("cannot open for write: " + path);
    f << j.dump(2) << '\n';
    if (!f) throw ArtifactError("write failed: " + path);
}

}  // namespace deepbayes::io
