#pragma once

// Flat "key = value" run configuration. '#' starts a comment; unknown or repeated keys are
// rejected. Keys are listed in README.md and by config_keys().

#include "sct/blockdata.hpp"
#include "sct/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sct {

struct RunConfig {
    SynthConfig synth;
    TrainConfig train;
    ModelSpec model;
    std::vector<double> sweep_grid = {};  // empty: default_threshold_grid()
    double max_fnr = 0.01;
    double max_fpr = 0.02;
    double t_lo = 0.05;
    double t_hi = 0.95;
    double eval_threshold = 0.5;
    int bootstrap = 2000;
    std::uint64_t bootstrap_seed = 20240229;

    // Keys present in the parsed file (lets the CLI decide whether a seed was given).
    std::map<std::string, std::string> given;

    bool has(const std::string& key) const { return given.count(key) > 0; }
};

// All recognised keys with a one-line description.
const std::vector<std::pair<std::string, std::string>>& config_keys();

RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace sct
