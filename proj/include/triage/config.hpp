#pragma once

#include "triage/nn/network.hpp"
#include "triage/preprocess.hpp"
#include "triage/threshold.hpp"
#include "triage/train.hpp"
#include "triage/volume.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace triage {

// Phantom cohort used when no dataset manifest is given. Lesioned and healthy
// studies alternate; training seeds are seed + i, validation seeds seed + 4000 + i.
struct CohortConfig {
    int train_lesioned = 20;
    int train_healthy = 20;
    int val_lesioned = 5;
    int val_healthy = 5;
    Shape3 shape{16, 48, 48};
    Spacing spacing{5.0, 2.0, 2.0};
    std::uint64_t seed = 1000;
};

// One study of a manifest. Paths are resolved against the config file's
// directory. Lungs are mandatory; lesions and label are each optional.
struct DatasetEntry {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path lungs;
    std::optional<std::filesystem::path> lesions;
    std::optional<int> label;
    std::string source = "manifest";
};

struct ModelConfig {
    nn::NetworkSpec spec;
    train::TrainConfig train;
    std::uint64_t init_seed = 0;
};

struct ServiceConfig {
    int workers = 2;
    std::filesystem::path weights; // empty: serve without models (healthz reports it)
};

struct ExperimentConfig {
    PreprocessConfig preprocess;
    ThresholdConfig threshold;
    int crop_margin = 2;
    ModelConfig lungs;
    std::optional<ModelConfig> lesions; // absent: threshold baseline
    CohortConfig cohort;
    std::vector<DatasetEntry> train_data; // non-empty replaces the cohort
    std::vector<DatasetEntry> val_data;
    ServiceConfig service;

    void validate() const;
};

// Miniature desk-scale setup: 3-level lung U-Net, 3-level multitask net,
// the desk_* training presets and a 40 + 10 phantom cohort.
ExperimentConfig default_experiment();

// Keys missing from the file keep default_experiment() values. A "train"
// section may name a "preset" and override single fields. Throws
// InvalidArgument (malformed or unknown values) and InvalidSpec.
ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

nlohmann::json to_json(const train::TrainConfig& c);
train::TrainConfig train_config_from_json(const nlohmann::json& j);

// ---- Training driver ----------------------------------------------------------

struct ExperimentResult {
    train::TrainResult lungs;
    std::optional<train::TrainResult> lesions;
    double seconds = 0.0;
};

using ExperimentLog = std::function<void(const std::string& model, const train::BatchLog&,
                                         const train::ValidationLog*)>;

// Builds the datasets, trains the lung network and the lesion network (if any)
// and writes a weights bundle with "lungs" and "lesions" models to out.
ExperimentResult run_experiment(const ExperimentConfig& c, const std::filesystem::path& out,
                                const ExperimentLog& log = {});

} // namespace triage
