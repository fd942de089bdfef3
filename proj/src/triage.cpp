#include "triage/triage.hpp"

#include "triage/error.hpp"
#include "triage/nn/weights_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace triage {

SeverityResult severity_score(const Mask& lesion, const LungSplit& split)
{
    if (lesion.shape() != split.left.shape() || lesion.shape() != split.right.shape())
        throw Error(ErrorCode::Misalignment, "lesion mask and lung split differ in shape");
    std::size_t left = 0, right = 0, hit_left = 0, hit_right = 0;
    const auto& les = lesion.data();
    const auto& l = split.left.data();
    const auto& r = split.right.data();
    for (std::size_t i = 0; i < les.size(); ++i) {
        left += l[i];
        right += r[i];
        hit_left += l[i] & les[i];
        hit_right += r[i] & les[i];
    }
    SeverityResult s;
    if (left == 0)
        warn("severity_score: left lung is empty; its fraction is 0");
    else
        s.fraction_left = double(hit_left) / double(left);
    if (right == 0)
        warn("severity_score: right lung is empty; its fraction is 0");
    else
        s.fraction_right = double(hit_right) / double(right);
    s.severity = std::max(s.fraction_left, s.fraction_right);
    return s;
}

int grade_ct(double severity)
{
    if (!(severity >= 0.0 && severity <= 1.0))
        throw Error(ErrorCode::OutOfRange, "severity must lie in [0, 1]");
    if (severity == 0.0)
        return 0;
    if (severity <= 0.25)
        return 1;
    if (severity <= 0.5)
        return 2;
    if (severity <= 0.75)
        return 3;
    return 4;
}

nlohmann::json to_json(const TriageResult& r)
{
    return {{"study_id", r.study_id},
            {"covid_probability", r.covid_probability},
            {"severity", r.severity},
            {"ct_grade", r.ct_grade},
            {"per_lung_fractions", {{"left", r.fraction_left}, {"right", r.fraction_right}}},
            {"method", r.method},
            {"wall_time_ms", r.wall_time_ms}};
}

TriageResult triage_result_from_json(const nlohmann::json& j)
{
    try {
        TriageResult r;
        r.study_id = j.at("study_id").get<std::string>();
        r.covid_probability = j.at("covid_probability").get<double>();
        r.severity = j.at("severity").get<double>();
        r.ct_grade = j.at("ct_grade").get<int>();
        r.fraction_left = j.at("per_lung_fractions").at("left").get<double>();
        r.fraction_right = j.at("per_lung_fractions").at("right").get<double>();
        r.method = j.at("method").get<std::string>();
        r.wall_time_ms = j.at("wall_time_ms").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed TriageResult: ") + e.what());
    }
}

const char* to_string(RankMode m) { return m == RankMode::Identification ? "identification" : "severity"; }

RankMode rank_mode_from_string(const std::string& s)
{
    if (s == "identification")
        return RankMode::Identification;
    if (s == "severity")
        return RankMode::Severity;
    throw Error(ErrorCode::InvalidArgument, "unknown ranking mode '" + s + "'");
}

std::vector<RankEntry> rank_studies(std::vector<RankEntry> entries, RankMode mode)
{
    auto score = [mode](const RankEntry& e) {
        return mode == RankMode::Identification ? e.result.covid_probability : e.result.severity;
    };
    std::sort(entries.begin(), entries.end(), [&](const RankEntry& a, const RankEntry& b) {
        const double sa = score(a), sb = score(b);
        if (sa != sb)
            return sa > sb;
        if (a.ingested_at != b.ingested_at)
            return a.ingested_at < b.ingested_at;
        return a.result.study_id < b.result.study_id;
    });
    return entries;
}

// ---- Pipeline -------------------------------------------------------------------

const char* to_string(LesionMethod m)
{
    switch (m) {
    case LesionMethod::Multitask: return "multitask";
    case LesionMethod::Unet2d: return "unet2d";
    case LesionMethod::Unet3d: return "unet3d";
    case LesionMethod::Threshold: return "threshold";
    }
    return "?";
}

TriageModels TriageModels::load(const std::filesystem::path& weights)
{
    TriageModels m;
    const auto names = nn::model_names(weights);
    auto has = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
    if (!has("lungs"))
        throw Error(ErrorCode::KeyMismatch, "weights bundle has no 'lungs' model");
    m.lungs = nn::load_network<float>(weights, "lungs");
    if (has("lesions")) {
        m.lesions = nn::load_network<float>(weights, "lesions");
        switch (m.lesions->spec().kind) {
        case nn::NetKind::Multitask: m.method = LesionMethod::Multitask; break;
        case nn::NetKind::Unet2d: m.method = LesionMethod::Unet2d; break;
        case nn::NetKind::Unet3d: m.method = LesionMethod::Unet3d; break;
        default: throw Error(ErrorCode::InvalidSpec, "lesion model must be MULTITASK, UNET2D or UNET3D");
        }
    }
    return m;
}

PipelineOutput run_pipeline(const Volume& v, const TriageModels& models)
{
    const auto t0 = std::chrono::steady_clock::now();
    if (!models.lungs)
        throw Error(ErrorCode::InvalidArgument, "pipeline needs a lung model");
    if (models.method != LesionMethod::Threshold && !models.lesions)
        throw Error(ErrorCode::InvalidArgument, "pipeline method needs a lesion model");

    const Volume hu = resample_axial(v, models.preprocess);
    const Volume pre = normalize_intensity(hu, models.preprocess);
    const Mask lungs = segment_lungs(pre, *models.lungs);
    const LungSplit split = split_lungs(lungs);
    const CropResult crop_pre = crop_to_lungs(pre, lungs, models.crop_margin);
    const BoundingBox& box = crop_pre.record.box;

    std::vector<float> prob;
    std::optional<double> covid;
    switch (models.method) {
    case LesionMethod::Multitask: {
        auto out = nn::forward_multitask(*models.lesions, crop_pre.volume);
        prob = std::move(out.seg_probabilities);
        covid = out.covid_probability;
        break;
    }
    case LesionMethod::Unet2d: prob = nn::forward_unet2d(*models.lesions, crop_pre.volume); break;
    case LesionMethod::Unet3d: prob = nn::forward_unet3d(*models.lesions, crop_pre.volume); break;
    case LesionMethod::Threshold: {
        const Mask les = threshold_segment(crop(hu, box), crop(lungs, box), models.threshold);
        prob.assign(les.data().begin(), les.data().end());
        break;
    }
    }
    std::vector<std::uint8_t> bin(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i)
        bin[i] = std::uint8_t(prob[i] > 0.5f);
    const Mask lesion_crop(box.shape(), pre.spacing(), std::move(bin), MaskKind::Lesion);
    const Mask lesion = intersect(embed(lesion_crop, crop_pre.record), lungs, MaskKind::Lesion);

    const SeverityResult sev = severity_score(lesion, split);
    PipelineOutput out;
    out.result.study_id = v.study_id();
    out.result.severity = sev.severity;
    out.result.fraction_left = sev.fraction_left;
    out.result.fraction_right = sev.fraction_right;
    out.result.ct_grade = grade_ct(sev.severity);
    out.result.covid_probability = covid.value_or(sev.severity);
    out.result.method = to_string(models.method);
    out.lesion = resample_mask_to(lesion, v.shape(), v.spacing());
    out.lungs = resample_mask_to(lungs, v.shape(), v.spacing());
    out.degenerate_split = split.degenerate;
    const auto t1 = std::chrono::steady_clock::now();
    out.result.wall_time_ms = std::max(std::chrono::duration<double, std::milli>(t1 - t0).count(), 1e-6);
    return out;
}

PhantomSamples study_samples(const Volume& v, const Mask& lungs_in, const std::optional<Mask>& lesion_in,
                             std::optional<int> label, const std::string& id, const std::string& source,
                             const PreprocessConfig& cfg, int crop_margin)
{
    const Volume pre = preprocess(v, cfg);
    const Mask lungs = resample_mask_to(lungs_in, pre.shape(), pre.spacing());
    PhantomSamples s;
    s.lungs.id = id;
    s.lungs.image = pre;
    s.lungs.mask = lungs;
    s.lungs.source = source;
    const CropResult c = crop_to_lungs(pre, lungs, crop_margin);
    s.lesions.id = id;
    s.lesions.image = c.volume;
    if (lesion_in)
        s.lesions.mask = crop(resample_mask_to(*lesion_in, pre.shape(), pre.spacing()), c.record.box);
    s.lesions.label = label;
    s.lesions.source = source;
    return s;
}

PhantomSamples phantom_samples(const Phantom& p, const std::string& id, const PreprocessConfig& cfg, int crop_margin)
{
    return study_samples(p.volume, p.lungs, p.lesion, p.label, id, "phantom", cfg, crop_margin);
}

} // namespace triage
