#pragma once

#include "triage/lungs.hpp"
#include "triage/nn/network.hpp"
#include "triage/phantom.hpp"
#include "triage/preprocess.hpp"
#include "triage/threshold.hpp"
#include "triage/train.hpp"
#include "triage/volume.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace triage {

struct SeverityResult {
    double severity = 0.0;
    double fraction_left = 0.0;
    double fraction_right = 0.0;
};

// fraction = |lesion & lung| / |lung| per side, severity = the larger one. A
// side with no voxels contributes 0 with a warning. Throws Misalignment.
SeverityResult severity_score(const Mask& lesion, const LungSplit& split);

// CT-0 only for exactly 0; (0, .25] -> 1, (.25, .5] -> 2, (.5, .75] -> 3,
// (.75, 1] -> 4. Throws OutOfRange outside [0, 1].
int grade_ct(double severity);

struct TriageResult {
    std::string study_id;
    double covid_probability = 0.0;
    double severity = 0.0;
    int ct_grade = 0;
    double fraction_left = 0.0;
    double fraction_right = 0.0;
    std::string method;
    double wall_time_ms = 0.0;

    friend bool operator==(const TriageResult&, const TriageResult&) = default;
};

nlohmann::json to_json(const TriageResult& r);
TriageResult triage_result_from_json(const nlohmann::json& j);

enum class RankMode { Identification, Severity };
const char* to_string(RankMode m);
RankMode rank_mode_from_string(const std::string& s);

struct RankEntry {
    TriageResult result;
    std::int64_t ingested_at = 0; // any monotone clock; only the order matters
};

// Descending by the mode's score, ties by ingestion time (oldest first), then
// study_id. A deterministic total order.
std::vector<RankEntry> rank_studies(std::vector<RankEntry> entries, RankMode mode);

// ---- Pipeline -------------------------------------------------------------------

enum class LesionMethod { Multitask, Unet2d, Unet3d, Threshold };
const char* to_string(LesionMethod m);

struct TriageModels {
    std::shared_ptr<nn::Network<float>> lungs;
    std::shared_ptr<nn::Network<float>> lesions; // null for the threshold method
    LesionMethod method = LesionMethod::Threshold;
    PreprocessConfig preprocess;
    ThresholdConfig threshold;
    int crop_margin = 2; // voxels around the lung box fed to the lesion model

    // Reads a bundle with a "lungs" model and an optional "lesions" model whose
    // kind selects the method (MULTITASK, UNET2D or UNET3D).
    static TriageModels load(const std::filesystem::path& weights);
};

struct PipelineOutput {
    TriageResult result;
    Mask lesion;     // original geometry
    Mask lungs;      // original geometry
    bool degenerate_split = false;
};

// preprocess -> segment_lungs -> split_lungs -> crop -> lesion model -> embed
// -> severity_score -> grade_ct. Severity uses lesion & lungs on the
// resampled grid; the returned masks are mapped back onto v's grid. Methods
// without a classification head report the severity as the probability.
PipelineOutput run_pipeline(const Volume& v, const TriageModels& models);

// Network inputs for one phantom, built the way run_pipeline builds them but
// from ground-truth lungs: the full preprocessed volume with its lung mask,
// and the lung-box crop with its lesion mask and label.
struct PhantomSamples {
    train::Sample lungs;
    train::Sample lesions;
};
PhantomSamples phantom_samples(const Phantom& p, const std::string& id, const PreprocessConfig& cfg = {},
                               int crop_margin = 2);

// Same for a labelled study on disk: lungs are required (they define the crop),
// the lesion mask and the label are each optional.
PhantomSamples study_samples(const Volume& v, const Mask& lungs, const std::optional<Mask>& lesion,
                             std::optional<int> label, const std::string& id, const std::string& source,
                             const PreprocessConfig& cfg = {}, int crop_margin = 2);

} // namespace triage
