#pragma once

#include "triage/lungs.hpp"
#include "triage/phantom.hpp"
#include "triage/triage.hpp"

#include <chrono>
#include <filesystem>
#include <random>
#include <string>

namespace fixture {

struct TempDir {
    std::filesystem::path path;

    TempDir()
    {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("triage_test_" + std::to_string(rd()) + "_" +
                std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        std::filesystem::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

// Thresholds halfway between the phantom HU levels. Exact on phantoms with a
// noise sigma of a few HU; stands in for the networks where only the service
// plumbing is under test.
inline triage::PipelineOutput phantom_scorer(const triage::Volume& v)
{
    using namespace triage;
    Mask lungs = Mask::zeros_like(v, MaskKind::Lungs);
    Mask lesion = Mask::zeros_like(v, MaskKind::Lesion);
    std::vector<std::uint8_t> l(v.data().size()), s(v.data().size());
    for (std::size_t i = 0; i < l.size(); ++i) {
        const float hu = v.data()[i];
        l[i] = hu > -925.0f && hu < -200.0f;
        s[i] = hu > -625.0f && hu < -200.0f;
    }
    lungs = Mask(v.shape(), v.spacing(), l, MaskKind::Lungs);
    lesion = Mask(v.shape(), v.spacing(), s, MaskKind::Lesion);
    const LungSplit split = split_lungs(lungs);
    const SeverityResult sev = severity_score(lesion, split);
    PipelineOutput out;
    out.result.study_id = v.study_id();
    out.result.severity = sev.severity;
    out.result.fraction_left = sev.fraction_left;
    out.result.fraction_right = sev.fraction_right;
    out.result.ct_grade = grade_ct(sev.severity);
    out.result.covid_probability = sev.severity > 0 ? 0.5 + 0.5 * sev.severity : 0.25;
    out.result.method = "oracle";
    out.lesion = lesion;
    out.lungs = lungs;
    out.degenerate_split = split.degenerate;
    return out;
}

} // namespace fixture
