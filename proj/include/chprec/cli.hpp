#pragma once

#include "chprec/errors.hpp"
#include "chprec/training.hpp"

#include <ctime>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace chprec {

/// Per-dataset hyperparameter presets (applied only where the user gave no
/// explicit value).
struct DatasetPreset {
    std::size_t layers;
    std::size_t dim;
    double lr;
    double lambda;
    double epsilon;
    double drop_ratio;
    double rating_threshold;
    std::size_t core;
    RatingsFormat format;
};

inline const std::map<std::string, DatasetPreset>& dataset_presets() {
    static const std::map<std::string, DatasetPreset> presets = {
        {"ml100k", {3, 128, 1e-3, 0.01, 0.006, 0.1, 5.0, 1, RatingsFormat::TabSeparated}},
        {"ml1m", {2, 64, 1e-3, 0.01, 0.001, 0.1, 5.0, 10, RatingsFormat::DoubleColonSeparated}},
        {"amazon", {4, 128, 1e-4, 0.01, 0.003, 0.1, 5.0, 10, RatingsFormat::TabSeparated}},
        {"gowalla", {3, 128, 1e-4, 0.001, 0.004, 0.1, 1.0, 10, RatingsFormat::TabSeparated}},
    };
    return presets;
}

/// Record of one CLI run, written next to its outputs. Key-value lines; the
/// `timestamp` line is informational, everything else pins the run.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> config; // effective values, in order
    std::vector<std::pair<std::string, std::string>> paths;
    std::uint64_t seed = 0;

    void write(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw Error("manifest: cannot open " + path);
        os << "command = " << command << '\n';
        os << "timestamp = " << std::time(nullptr) << '\n';
        os << "seed = " << seed << '\n';
        for (const auto& [k, v] : config) os << k << " = " << v << '\n';
        for (const auto& [k, v] : paths) os << k << " = " << v << '\n';
    }
};

} // namespace chprec
