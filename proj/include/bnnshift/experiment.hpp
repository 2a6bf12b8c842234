#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace bnnshift {

struct RunReport {
    std::string config_hash;
    std::string git_describe;
    nlohmann::ordered_json summary;  // per-analysis result blocks
    double wall_clock_seconds = 0.0;
    std::string output_dir;
};

struct RunOverrides {
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

// Execute a config: writes report.json, metrics.csv, projections.csv,
// robustness.csv, spectrum.csv and chain sidecars under the output directory.
// Rerunning with the same config and seed is bit-identical in every CSV/JSON
// output (wall clock goes to run.log).
RunReport run_experiment(const nlohmann::ordered_json& config,
                         const RunOverrides& overrides = {});
RunReport run_experiment_file(const std::string& config_path,
                              const RunOverrides& overrides = {});

struct ExperimentEntry {
    std::string name;
    int criterion;  // acceptance criterion this config exercises
    std::string config_file;
    std::string description;
};

const std::vector<ExperimentEntry>& experiment_registry();

// configs/ directory: BNNLAB_CONFIG_DIR env var, else the compiled-in source
// path.
std::string default_config_dir();

std::string config_hash_hex(const nlohmann::ordered_json& config);

}  // namespace bnnshift
